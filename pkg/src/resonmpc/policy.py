"""Small dense network that imitates the horizon controller.

Inputs (i_o, v_c, p_des) are normalized to [-1, 1] by the sampling box;
the two raw outputs are mapped affinely onto the input-constraint box
(center + half-width * y) and clamped, so any parameter values yield
admissible control inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArgumentError, TrainingDivergenceError
from .nmpc import NmpcConfig, RecedingHorizonController, solve
from .plant import ControlInput, ConverterParams, PlantState, simulate_cycle

__all__ = [
    "PolicyNetwork",
    "Dataset",
    "TrainConfig",
    "init_network",
    "forward",
    "forward_batch",
    "backprop_gradients",
    "train",
    "generate_dataset_random",
    "generate_dataset_trajectories",
    "generate_dataset_rollouts",
    "save_network",
    "load_network",
]

NETWORK_FORMAT_VERSION = 1

DEFAULT_LAYER_SIZES = (3, 10, 10, 10, 10, 10, 2)
DEFAULT_INPUT_LO = (-150.0, -2000.0, 0.0)  # i_o [A], v_c [V], p_des [W]
# the setpoint range deliberately exceeds the converter's maximum steady
# power (~3.7 kW): the correction rule commands above-rated powers to cancel
# steady offsets under parameter error, and the policy must stay competent
# there (the solver saturates such setpoints toward the max-power inputs)
DEFAULT_INPUT_HI = (150.0, 2000.0, 4000.0)


@dataclass(frozen=True)
class PolicyNetwork:
    """Feed-forward policy: weights/biases per layer plus the two boxes."""

    weights: tuple  # np.ndarray (n_out, n_in) per layer
    biases: tuple  # np.ndarray (n_out,) per layer
    activation: str  # hidden activation, "tanh"
    input_lo: np.ndarray
    input_hi: np.ndarray
    output_lo: np.ndarray
    output_hi: np.ndarray

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def output_center(self) -> np.ndarray:
        return 0.5 * (self.output_lo + self.output_hi)

    @property
    def output_half(self) -> np.ndarray:
        return 0.5 * (self.output_hi - self.output_lo)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.input_lo) / (self.input_hi - self.input_lo) - 1.0

    def normalize_targets(self, u: np.ndarray) -> np.ndarray:
        return (u - self.output_center) / self.output_half


@dataclass(frozen=True)
class Dataset:
    """Labeled samples (i_o, v_c, p_des) -> (f_sw, duty)."""

    x: np.ndarray  # (n, 3)
    u: np.ndarray  # (n, 2)
    provenance: tuple  # "random-state" | "trajectory" | "rollout" per sample
    seed: int
    discarded: int = 0

    def __len__(self):
        return self.x.shape[0]

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["io_amps", "vc_volts", "pdes_watts", "fsw_hz", "duty", "provenance"])
            for xi, ui, tag in zip(self.x, self.u, self.provenance):
                w.writerow([repr(float(xi[0])), repr(float(xi[1])), repr(float(xi[2])),
                            repr(float(ui[0])), repr(float(ui[1])), tag])

    @classmethod
    def load_csv(cls, path, seed: int = 0) -> "Dataset":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.append(row)
        x = np.array([[float(r["io_amps"]), float(r["vc_volts"]), float(r["pdes_watts"])] for r in rows])
        u = np.array([[float(r["fsw_hz"]), float(r["duty"])] for r in rows])
        return cls(x=x, u=u, provenance=tuple(r["provenance"] for r in rows), seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.step_size <= 0:
            raise ArgumentError("epochs, batch_size and step_size must be positive")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ArgumentError("validation_fraction must lie in [0, 0.5]")


def init_network(
    seed: int = 0,
    layer_sizes=DEFAULT_LAYER_SIZES,
    activation: str = "tanh",
    input_lo=DEFAULT_INPUT_LO,
    input_hi=DEFAULT_INPUT_HI,
    output_lo=None,
    output_hi=None,
    config: Optional[NmpcConfig] = None,
) -> PolicyNetwork:
    """Glorot-uniform initialized network; output box defaults to the NMPC bounds."""
    cfg = config or NmpcConfig()
    if output_lo is None:
        output_lo = (cfg.f_min, cfg.d_min)
    if output_hi is None:
        output_hi = (cfg.f_max, cfg.d_max)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)).astype(np.float32))
        biases.append(np.zeros(n_out, dtype=np.float32))
    return PolicyNetwork(
        weights=tuple(weights),
        biases=tuple(biases),
        activation=activation,
        input_lo=np.asarray(input_lo, dtype=float),
        input_hi=np.asarray(input_hi, dtype=float),
        output_lo=np.asarray(output_lo, dtype=float),
        output_hi=np.asarray(output_hi, dtype=float),
    )


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ArgumentError(f"unknown activation {name!r}")


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation value
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ArgumentError(f"unknown activation {name!r}")


def _forward_raw(net: PolicyNetwork, xn: np.ndarray):
    """Hidden activations and raw (pre-clamp) outputs for normalized inputs."""
    acts = [xn]
    a = xn
    n_layers = len(net.weights)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ np.asarray(w, dtype=float).T + np.asarray(b, dtype=float)
        a = z if l == n_layers - 1 else _act(net.activation, z)
        acts.append(a)
    return acts


def forward_batch(net: PolicyNetwork, x: np.ndarray) -> np.ndarray:
    """Denormalized, clamped control inputs for a batch of raw inputs (n, 3)."""
    xn = net.normalize_inputs(np.asarray(x, dtype=float))
    y = _forward_raw(net, xn)[-1]
    u = net.output_center + net.output_half * y
    return np.clip(u, net.output_lo, net.output_hi)


def forward(net: PolicyNetwork, x) -> ControlInput:
    """Evaluate the policy at one point (i_o, v_c, p_des)."""
    u = forward_batch(net, np.asarray(x, dtype=float).reshape(1, 3))[0]
    return ControlInput(float(u[0]), float(u[1]))


def loss_value(net: PolicyNetwork, x: np.ndarray, u_target: np.ndarray) -> float:
    """Batch-mean squared error on normalized targets (summed over outputs)."""
    xn = net.normalize_inputs(x)
    tn = net.normalize_targets(u_target)
    y = _forward_raw(net, xn)[-1]
    r = y - tn
    return float(np.mean(np.sum(r * r, axis=1)))


def backprop_gradients(net: PolicyNetwork, x: np.ndarray, u_target: np.ndarray):
    """Exact gradients of `loss_value` w.r.t. every weight and bias."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ArgumentError("batch must be nonempty")
    xn = net.normalize_inputs(x)
    tn = net.normalize_targets(np.asarray(u_target, dtype=float))
    acts = _forward_raw(net, xn)
    n = xn.shape[0]
    delta = 2.0 * (acts[-1] - tn) / n  # d(loss)/d(z_last); output layer is linear
    g_w = [None] * len(net.weights)
    g_b = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        g_w[l] = delta.T @ acts[l]
        g_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ np.asarray(net.weights[l], dtype=float)) * _act_grad(
                net.activation, acts[l]
            )
    return g_w, g_b


def train(data: Dataset, cfg: TrainConfig, net: Optional[PolicyNetwork] = None):
    """Adam on minibatches; returns (best-validation network, history).

    history["train"] / history["val"] hold per-epoch losses; with a zero
    validation fraction the final parameters are returned instead.
    """
    if len(data) == 0:
        raise ArgumentError("dataset must be nonempty")
    if net is None:
        net = init_network(seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(data))
    n_val = int(round(cfg.validation_fraction * len(data)))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:
        raise ArgumentError("validation fraction leaves no training data")
    x_tr, u_tr = data.x[tr_idx], data.u[tr_idx]
    x_val, u_val = data.x[val_idx], data.u[val_idx]

    # train in 64-bit; stored networks are 32-bit
    w = [np.asarray(wl, dtype=float).copy() for wl in net.weights]
    b = [np.asarray(bl, dtype=float).copy() for bl in net.biases]
    m_w = [np.zeros_like(wl) for wl in w]
    v_w = [np.zeros_like(wl) for wl in w]
    m_b = [np.zeros_like(bl) for bl in b]
    v_b = [np.zeros_like(bl) for bl in b]

    def as_net(wl, bl):
        return replace(
            net,
            weights=tuple(np.asarray(q, dtype=np.float32) for q in wl),
            biases=tuple(np.asarray(q, dtype=np.float32) for q in bl),
        )

    history = {"train": [], "val": []}
    best = (np.inf, [q.copy() for q in w], [q.copy() for q in b])
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(x_tr.shape[0])
        cur = replace(net, weights=tuple(w), biases=tuple(b))
        for lo in range(0, order.size, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            g_w, g_b = backprop_gradients(cur, x_tr[idx], u_tr[idx])
            t += 1
            bc1 = 1.0 - cfg.beta1**t
            bc2 = 1.0 - cfg.beta2**t
            for l in range(len(w)):
                for p, g, m, v in ((w[l], g_w[l], m_w[l], v_w[l]),
                                   (b[l], g_b[l], m_b[l], v_b[l])):
                    m *= cfg.beta1
                    m += (1.0 - cfg.beta1) * g
                    v *= cfg.beta2
                    v += (1.0 - cfg.beta2) * g * g
                    p -= cfg.step_size * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        cur = replace(net, weights=tuple(w), biases=tuple(b))
        tr_loss = loss_value(cur, x_tr, u_tr)
        if not np.isfinite(tr_loss):
            raise TrainingDivergenceError(epoch)
        history["train"].append(tr_loss)
        if n_val:
            val_loss = loss_value(cur, x_val, u_val)
            history["val"].append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, [q.copy() for q in w], [q.copy() for q in b])
        else:
            best = (tr_loss, w, b)
    return as_net(best[1], best[2]), history


def _clean_label(sol) -> bool:
    return sol.status == "converged" and sol.initial_state_zvs_ok


def generate_dataset_random(
    n: int,
    config: NmpcConfig,
    params: ConverterParams,
    seed: int = 0,
    input_lo=DEFAULT_INPUT_LO,
    input_hi=DEFAULT_INPUT_HI,
) -> Dataset:
    """Uniformly sampled states/setpoints labeled by solving the horizon problem.

    Infeasible draws are discarded; sampling stops after a 10*n draw budget.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(input_lo, dtype=float)
    hi = np.asarray(input_hi, dtype=float)
    xs, us = [], []
    discarded = 0
    budget = 10 * n
    while len(xs) < n and budget > 0:
        budget -= 1
        x = rng.uniform(lo, hi)
        sol = solve(PlantState(x[0], x[1]), x[2], config, params)
        if not _clean_label(sol):
            discarded += 1
            continue
        u = sol.first_input
        xs.append(x)
        us.append([u.f_sw, u.duty])
    return Dataset(
        x=np.array(xs).reshape(-1, 3),
        u=np.array(us).reshape(-1, 2),
        provenance=("random-state",) * len(xs),
        seed=seed,
        discarded=discarded,
    )


def generate_dataset_trajectories(
    n_traj: int,
    steps: int,
    config: NmpcConfig,
    params: ConverterParams,
    seed: int = 0,
    input_lo=DEFAULT_INPUT_LO,
    input_hi=DEFAULT_INPUT_HI,
    plant_error: float = 0.0,
) -> Dataset:
    """Closed-loop samples: run the exact controller and record what it applied.

    Each trajectory draws an initial state and setpoint from the sampling
    box; trajectories whose first solve is infeasible are discarded (same
    budget rule as random sampling, counted in draws of trajectories).

    With plant_error > 0 each trajectory is simulated on a plant whose load
    resistance and tank inductance are scaled by independent uniform factors
    in [1 - e, 1 + e], while the controller keeps the unperturbed model.
    The recorded states then cover the operating points a mismatched plant
    actually steers the policy through, not just the nominal ones.
    """
    if n_traj < 1 or steps < 1:
        raise ArgumentError("n_traj and steps must be >= 1")
    if not 0.0 <= plant_error < 1.0:
        raise ArgumentError(f"plant_error must lie in [0, 1), got {plant_error}")
    rng = np.random.default_rng(seed)
    lo = np.asarray(input_lo, dtype=float)
    hi = np.asarray(input_hi, dtype=float)
    xs, us = [], []
    discarded = 0
    kept = 0
    budget = 10 * n_traj
    while kept < n_traj and budget > 0:
        budget -= 1
        draw = rng.uniform(lo, hi)
        state = PlantState(draw[0], draw[1])
        p_des = draw[2]
        plant = params
        if plant_error > 0.0:
            fr, fl = rng.uniform(1.0 - plant_error, 1.0 + plant_error, 2)
            plant = replace(params, r_l=params.r_l * fr, l_r=params.l_r * fl)
        first = solve(state, p_des, config, params)
        if not _clean_label(first):
            discarded += 1
            continue
        kept += 1
        ctrl = RecedingHorizonController(config, params)
        ctrl.last_solution = first
        ctrl.last_input = first.first_input
        xs.append([state.i_o, state.v_c, p_des])
        us.append([first.first_input.f_sw, first.first_input.duty])
        state = simulate_cycle(state, plant, first.first_input).state_end
        for _ in range(steps - 1):
            u, status = ctrl.step(state, p_des)
            if status != "converged":
                discarded += 1
            else:
                xs.append([state.i_o, state.v_c, p_des])
                us.append([u.f_sw, u.duty])
            state = simulate_cycle(state, plant, u).state_end
    return Dataset(
        x=np.array(xs).reshape(-1, 3),
        u=np.array(us).reshape(-1, 2),
        provenance=("trajectory",) * len(xs),
        seed=seed,
        discarded=discarded,
    )


def generate_dataset_rollouts(
    net: PolicyNetwork,
    n_traj: int,
    steps: int,
    config: NmpcConfig,
    params: ConverterParams,
    seed: int = 0,
    input_lo=DEFAULT_INPUT_LO,
    input_hi=DEFAULT_INPUT_HI,
    plant_error: float = 0.0,
) -> Dataset:
    """States visited by `net` in closed loop, labeled by the horizon solver.

    A network trained only on solver-driven trajectories can settle into its
    own spurious closed-loop fixed points in states the solver never visits;
    rolling the network out and labeling exactly those states removes them.
    The solver runs as a warm-started observer (its inputs are computed each
    cycle but never applied).  plant_error perturbs the simulated plant per
    trajectory as in `generate_dataset_trajectories`.
    """
    if n_traj < 1 or steps < 1:
        raise ArgumentError("n_traj and steps must be >= 1")
    if not 0.0 <= plant_error < 1.0:
        raise ArgumentError(f"plant_error must lie in [0, 1), got {plant_error}")
    rng = np.random.default_rng(seed)
    lo = np.asarray(input_lo, dtype=float)
    hi = np.asarray(input_hi, dtype=float)
    xs, us = [], []
    discarded = 0
    kept = 0
    budget = 10 * n_traj
    while kept < n_traj and budget > 0:
        budget -= 1
        draw = rng.uniform(lo, hi)
        state = PlantState(draw[0], draw[1])
        p_des = draw[2]
        plant = params
        if plant_error > 0.0:
            fr, fl = rng.uniform(1.0 - plant_error, 1.0 + plant_error, 2)
            plant = replace(params, r_l=params.r_l * fr, l_r=params.l_r * fl)
        first = solve(state, p_des, config, params)
        if not _clean_label(first):
            discarded += 1
            continue
        kept += 1
        observer = RecedingHorizonController(config, params)
        observer.last_solution = first
        xs.append([state.i_o, state.v_c, p_des])
        us.append([first.first_input.f_sw, first.first_input.duty])
        state = simulate_cycle(state, plant, forward(net, (state.i_o, state.v_c, p_des))).state_end
        for _ in range(steps - 1):
            label, status = observer.step(state, p_des)
            if status != "converged":
                discarded += 1
            else:
                xs.append([state.i_o, state.v_c, p_des])
                us.append([label.f_sw, label.duty])
            applied = forward(net, (state.i_o, state.v_c, p_des))
            state = simulate_cycle(state, plant, applied).state_end
    return Dataset(
        x=np.array(xs).reshape(-1, 3),
        u=np.array(us).reshape(-1, 2),
        provenance=("rollout",) * len(xs),
        seed=seed,
        discarded=discarded,
    )


def save_network(net: PolicyNetwork, path):
    doc = {
        "format_version": NETWORK_FORMAT_VERSION,
        "layers": list(net.layer_sizes),
        "activation": net.activation,
        "weights": [np.asarray(w, dtype=np.float32).ravel().tolist() for w in net.weights],
        "biases": [np.asarray(b, dtype=np.float32).tolist() for b in net.biases],
        "input_box": {"lo": net.input_lo.tolist(), "hi": net.input_hi.tolist()},
        "output_box": {"lo": net.output_lo.tolist(), "hi": net.output_hi.tolist()},
    }
    Path(path).write_text(json.dumps(doc))


def load_network(path) -> PolicyNetwork:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != NETWORK_FORMAT_VERSION:
        raise ArgumentError(f"unsupported network format_version in {path}")
    sizes = doc["layers"]
    weights = tuple(
        np.asarray(flat, dtype=np.float32).reshape(n_out, n_in)
        for flat, n_in, n_out in zip(doc["weights"], sizes[:-1], sizes[1:])
    )
    biases = tuple(np.asarray(b, dtype=np.float32) for b in doc["biases"])
    return PolicyNetwork(
        weights=weights,
        biases=biases,
        activation=doc["activation"],
        input_lo=np.asarray(doc["input_box"]["lo"], dtype=float),
        input_hi=np.asarray(doc["input_box"]["hi"], dtype=float),
        output_lo=np.asarray(doc["output_box"]["lo"], dtype=float),
        output_hi=np.asarray(doc["output_box"]["hi"], dtype=float),
    )
