"""Network forward/backward checks against finite differences, training
behavior, dataset generation and file round trips.
"""

import json

import numpy as np
import pytest

from resonmpc.errors import ArgumentError
from resonmpc.nmpc import NmpcConfig
from resonmpc.plant import ControlInput
from resonmpc.policy import (
    Dataset,
    PolicyNetwork,
    TrainConfig,
    backprop_gradients,
    forward,
    forward_batch,
    generate_dataset_random,
    generate_dataset_trajectories,
    init_network,
    load_network,
    loss_value,
    save_network,
    train,
)


def zero_like(net):
    return PolicyNetwork(
        weights=tuple(np.zeros_like(w) for w in net.weights),
        biases=tuple(np.zeros_like(b) for b in net.biases),
        activation=net.activation,
        input_lo=net.input_lo,
        input_hi=net.input_hi,
        output_lo=net.output_lo,
        output_hi=net.output_hi,
    )


class TestForward:
    def test_zero_network_gives_box_center(self):
        net = zero_like(init_network(seed=0))
        u = forward(net, (10.0, -500.0, 1200.0))
        assert u == ControlInput(65e3, 0.5)

    def test_deterministic(self):
        net = init_network(seed=3)
        x = (42.0, 900.0, 2100.0)
        assert forward(net, x) == forward(net, x)

    def test_output_box_safety_far_outside_sampling_box(self):
        # 1e5 inputs, many far outside the training ranges
        net = init_network(seed=5)
        rng = np.random.default_rng(0)
        x = rng.uniform(-1e6, 1e6, size=(100000, 3))
        u = forward_batch(net, x)
        assert np.all(u[:, 0] >= 30e3) and np.all(u[:, 0] <= 100e3)
        assert np.all(u[:, 1] >= 0.2) and np.all(u[:, 1] <= 0.8)

    def test_layer_sizes(self):
        net = init_network(seed=0)
        assert net.layer_sizes == (3, 10, 10, 10, 10, 10, 2)


class TestGradients:
    def test_matches_central_differences(self):
        from dataclasses import replace

        # promote stored 32-bit weights to 64-bit so the finite-difference
        # perturbation is not corrupted by storage rounding
        net = init_network(seed=2, layer_sizes=(3, 6, 6, 2))
        net = replace(
            net,
            weights=tuple(np.asarray(w, dtype=float) for w in net.weights),
            biases=tuple(np.asarray(b, dtype=float) for b in net.biases),
        )
        rng = np.random.default_rng(7)
        x = rng.uniform([-150, -2000, 0], [150, 2000, 3000], size=(16, 3))
        t = rng.uniform([35e3, 0.3], [90e3, 0.7], size=(16, 2))
        gw, gb = backprop_gradients(net, x, t)
        h = 1e-6
        worst = 0.0
        # weight shapes: (6, 3), (6, 6), (2, 6)
        for (l, i, j) in [(0, 2, 1), (1, 4, 3), (2, 0, 5), (2, 1, 2), (0, 5, 0),
                          (1, 0, 0), (2, 1, 3), (0, 3, 2), (1, 2, 5), (0, 0, 2)]:
            w_p = [q.copy() for q in net.weights]
            w_m = [q.copy() for q in net.weights]
            w_p[l][i, j] += h
            w_m[l][i, j] -= h
            lp = loss_value(replace(net, weights=tuple(w_p)), x, t)
            lm = loss_value(replace(net, weights=tuple(w_m)), x, t)
            fd = (lp - lm) / (2 * h)
            rel = abs(gw[l][i, j] - fd) / max(abs(fd), 1e-12)
            worst = max(worst, rel)
        assert worst < 1e-4

    def test_zero_residual_gives_zero_gradients(self):
        net = init_network(seed=4)
        rng = np.random.default_rng(1)
        x = rng.uniform([-150, -2000, 0], [150, 2000, 3000], size=(8, 3))
        u = forward_batch(net, x)  # targets equal to the outputs
        gw, gb = backprop_gradients(net, x, u)
        for g in gw + gb:
            assert np.max(np.abs(g)) < 1e-12

    def test_duplicating_samples_leaves_gradients_unchanged(self):
        net = init_network(seed=6)
        rng = np.random.default_rng(2)
        x = rng.uniform([-150, -2000, 0], [150, 2000, 3000], size=(5, 3))
        t = rng.uniform([35e3, 0.3], [90e3, 0.7], size=(5, 2))
        gw1, gb1 = backprop_gradients(net, x, t)
        gw2, gb2 = backprop_gradients(net, np.vstack([x, x]), np.vstack([t, t]))
        for a, b in zip(gw1 + gb1, gw2 + gb2):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


class TestTrain:
    def test_memorizes_single_sample(self):
        data = Dataset(
            x=np.array([[10.0, -300.0, 1500.0]]),
            u=np.array([[55e3, 0.45]]),
            provenance=("random-state",),
            seed=0,
            discarded=0,
        )
        cfg = TrainConfig(epochs=2000, batch_size=1, validation_fraction=0.0, seed=0)
        net, hist = train(data, cfg)
        assert hist["train"][-1] < 1e-8

    def test_same_seed_identical_history(self, trajectory_dataset):
        cfg = TrainConfig(epochs=5, seed=9)
        _, h1 = train(trajectory_dataset, cfg)
        _, h2 = train(trajectory_dataset, cfg)
        assert h1["train"] == h2["train"]
        assert h1["val"] == h2["val"]

    def test_loss_decreases_by_epoch_50(self, trajectory_dataset):
        cfg = TrainConfig(epochs=50, seed=1)
        _, hist = train(trajectory_dataset, cfg)
        assert hist["train"][49] < hist["train"][0]

    def test_invalid_config_rejected(self):
        with pytest.raises(ArgumentError):
            TrainConfig(epochs=0)
        with pytest.raises(ArgumentError):
            TrainConfig(validation_fraction=0.6)


class TestDatasets:
    def test_random_generation_small(self, params, nmpc_config):
        data = generate_dataset_random(3, nmpc_config, params, seed=21)
        assert len(data.x) == 3
        assert np.all(data.x[:, 0] >= -150) and np.all(data.x[:, 0] <= 150)
        assert np.all(data.x[:, 1] >= -2000) and np.all(data.x[:, 1] <= 2000)
        assert np.all(data.x[:, 2] >= 0) and np.all(data.x[:, 2] <= 4000)
        assert np.all(data.u[:, 0] >= 30e3) and np.all(data.u[:, 0] <= 100e3)
        assert np.all(data.u[:, 1] >= 0.2) and np.all(data.u[:, 1] <= 0.8)
        assert data.provenance == ("random-state",) * 3

    def test_random_generation_seed_determinism(self, params, nmpc_config):
        a = generate_dataset_random(2, nmpc_config, params, seed=33)
        b = generate_dataset_random(2, nmpc_config, params, seed=33)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.u, b.u)

    def test_trajectory_plant_error_validated_and_deterministic(self, params, nmpc_config):
        with pytest.raises(ArgumentError):
            generate_dataset_trajectories(1, 1, nmpc_config, params, plant_error=1.0)
        a = generate_dataset_trajectories(1, 3, nmpc_config, params, seed=4,
                                          plant_error=0.15)
        b = generate_dataset_trajectories(1, 3, nmpc_config, params, seed=4,
                                          plant_error=0.15)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.u, b.u)

    def test_trajectory_states_less_dispersed(self, trajectory_dataset, random_dataset):
        # closed-loop data concentrates near reachable operating states
        n = min(len(trajectory_dataset.x), len(random_dataset.x))
        scale = np.array([150.0, 2000.0])
        cov_t = np.cov((trajectory_dataset.x[:n, :2] / scale).T)
        cov_r = np.cov((random_dataset.x[:n, :2] / scale).T)
        assert np.trace(cov_t) < np.trace(cov_r)

    def test_csv_roundtrip(self, tmp_path, trajectory_dataset):
        path = tmp_path / "data.csv"
        trajectory_dataset.save_csv(path)
        back = Dataset.load_csv(path)
        np.testing.assert_array_equal(back.x, trajectory_dataset.x)
        np.testing.assert_array_equal(back.u, trajectory_dataset.u)
        assert back.provenance == trajectory_dataset.provenance


class TestNetworkFile:
    def test_roundtrip_preserves_outputs(self, tmp_path, trained_net):
        path = tmp_path / "net.json"
        save_network(trained_net, path)
        back = load_network(path)
        rng = np.random.default_rng(8)
        x = rng.uniform([-150, -2000, 0], [150, 2000, 3000], size=(50, 3))
        np.testing.assert_array_equal(forward_batch(back, x), forward_batch(trained_net, x))

    def test_second_save_is_identical(self, tmp_path, trained_net):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_network(trained_net, p1)
        save_network(load_network(p1), p2)
        assert p1.read_text() == p2.read_text()

    def test_format_version_checked(self, tmp_path, trained_net):
        path = tmp_path / "net.json"
        save_network(trained_net, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 999
        path.write_text(json.dumps(doc))
        with pytest.raises(ArgumentError):
            load_network(path)
