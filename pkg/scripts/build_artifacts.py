"""Rebuild the trained-policy artifacts used by the test suite and CLI demos.

Produces, under artifacts/:
  train_trajectory.csv  closed-loop labeled samples (the main training set)
  train_random.csv      uniformly sampled labeled states (for comparison)
  train_rollout.csv     aggregation samples from the stage-1 network's own
                        closed loop, labeled by the solver
  policy.json           network trained on trajectory + rollout samples
  policy_q16.json       16-bit fixed-point version of the same network

Everything is seeded, so reruns reproduce the same files.  Files that
already exist are kept (delete them to force a rebuild).  Runtime is
dominated by labeling states with horizon solves (around ten minutes).
"""

import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from resonmpc.config import DEFAULT_CONVERTER
from resonmpc.nmpc import NmpcConfig
from resonmpc.policy import (
    DEFAULT_INPUT_HI,
    DEFAULT_INPUT_LO,
    Dataset,
    TrainConfig,
    generate_dataset_random,
    generate_dataset_rollouts,
    generate_dataset_trajectories,
    init_network,
    save_network,
    train,
)
from resonmpc.quant import quantization_report, quantize, save_quantized

ARTIFACTS = ROOT / "artifacts"

N_TRAJ = 200
N_TRAJ_HIGH = 80  # extra trajectories at high setpoints, where the
                  # command-to-input map is steepest and correction-driven
                  # commands concentrate
TRAJ_STEPS = 25
N_ROLL = 100  # aggregation rollouts under the stage-1 network
N_ROLL_HIGH = 60
N_ROLL2 = 80  # second round, focused on near-max-power setpoints where the
              # command-to-input map is steepest and residual imitation error
              # costs the most delivered power
N_RANDOM = 600
EPOCHS = 6000


def main():
    ARTIFACTS.mkdir(exist_ok=True)
    params = DEFAULT_CONVERTER
    nmpc_cfg = NmpcConfig()

    t0 = time.time()
    traj_path = ARTIFACTS / "train_trajectory.csv"
    if traj_path.exists():
        data = Dataset.load_csv(traj_path)
        print(f"trajectory set: kept existing {len(data.x)} samples")
    else:
        # trajectories run on randomly perturbed plants (controller keeps the
        # nominal model) so the policy also sees the states a mismatched
        # plant steers it through
        data = generate_dataset_trajectories(
            N_TRAJ, TRAJ_STEPS, nmpc_cfg, params, seed=7, plant_error=0.15
        )
        high = generate_dataset_trajectories(
            N_TRAJ_HIGH, TRAJ_STEPS, nmpc_cfg, params, seed=13, plant_error=0.15,
            input_lo=(DEFAULT_INPUT_LO[0], DEFAULT_INPUT_LO[1], 2800.0),
            input_hi=DEFAULT_INPUT_HI,
        )
        data = Dataset(
            x=np.vstack([data.x, high.x]),
            u=np.vstack([data.u, high.u]),
            provenance=data.provenance + high.provenance,
            seed=data.seed,
            discarded=data.discarded + high.discarded,
        )
        data.save_csv(traj_path)
        print(f"trajectory set: {len(data.x)} samples, {data.discarded} discarded "
              f"({time.time() - t0:.0f}s)")

    t0 = time.time()
    rand_path = ARTIFACTS / "train_random.csv"
    if rand_path.exists():
        print("random set: kept existing file")
    else:
        rdata = generate_dataset_random(N_RANDOM, nmpc_cfg, params, seed=11)
        rdata.save_csv(rand_path)
        print(f"random set: {len(rdata.x)} samples, {rdata.discarded} discarded "
              f"({time.time() - t0:.0f}s)")

    t0 = time.time()
    net_path = ARTIFACTS / "policy.json"
    if net_path.exists():
        from resonmpc.policy import load_network
        net = load_network(net_path)
        print("policy: kept existing file")
    else:
        cfg = TrainConfig(epochs=EPOCHS, batch_size=64, seed=1)
        net, hist = train(data, cfg, net=init_network(seed=1, config=nmpc_cfg))
        print(f"stage 1: final train loss {hist['train'][-1]:.3e}, "
              f"best val loss {min(hist['val']):.3e} ({time.time() - t0:.0f}s)")

        # aggregation round: the stage-1 network settles into its own
        # closed-loop states, which solver-driven trajectories never visit;
        # label those states and retrain so the network has no spurious
        # fixed points of its own
        t0 = time.time()
        roll = generate_dataset_rollouts(
            net, N_ROLL, TRAJ_STEPS, nmpc_cfg, params, seed=17, plant_error=0.15
        )
        roll_high = generate_dataset_rollouts(
            net, N_ROLL_HIGH, TRAJ_STEPS, nmpc_cfg, params, seed=19,
            plant_error=0.15,
            input_lo=(DEFAULT_INPUT_LO[0], DEFAULT_INPUT_LO[1], 2800.0),
            input_hi=DEFAULT_INPUT_HI,
        )
        roll = Dataset(
            x=np.vstack([roll.x, roll_high.x]),
            u=np.vstack([roll.u, roll_high.u]),
            provenance=roll.provenance + roll_high.provenance,
            seed=roll.seed,
            discarded=roll.discarded + roll_high.discarded,
        )
        print(f"rollout set: {len(roll.x)} samples, {roll.discarded} discarded "
              f"({time.time() - t0:.0f}s)")

        t0 = time.time()
        combined = Dataset(
            x=np.vstack([data.x, roll.x]),
            u=np.vstack([data.u, roll.u]),
            provenance=data.provenance + roll.provenance,
            seed=data.seed,
            discarded=data.discarded + roll.discarded,
        )
        cfg2 = TrainConfig(epochs=EPOCHS, batch_size=64, seed=2, step_size=5e-4)
        net, hist = train(combined, cfg2, net=net)
        print(f"stage 2: final train loss {hist['train'][-1]:.3e}, "
              f"best val loss {min(hist['val']):.3e} ({time.time() - t0:.0f}s)")

        t0 = time.time()
        roll2 = generate_dataset_rollouts(
            net, N_ROLL2, TRAJ_STEPS, nmpc_cfg, params, seed=23, plant_error=0.15,
            input_lo=(DEFAULT_INPUT_LO[0], DEFAULT_INPUT_LO[1], 3400.0),
            input_hi=DEFAULT_INPUT_HI,
        )
        roll = Dataset(
            x=np.vstack([roll.x, roll2.x]),
            u=np.vstack([roll.u, roll2.u]),
            provenance=roll.provenance + roll2.provenance,
            seed=roll.seed,
            discarded=roll.discarded + roll2.discarded,
        )
        roll.save_csv(ARTIFACTS / "train_rollout.csv")
        print(f"rollout round 2: {len(roll2.x)} samples, {roll2.discarded} "
              f"discarded ({time.time() - t0:.0f}s)")

        t0 = time.time()
        combined = Dataset(
            x=np.vstack([combined.x, roll2.x]),
            u=np.vstack([combined.u, roll2.u]),
            provenance=combined.provenance + roll2.provenance,
            seed=combined.seed,
            discarded=combined.discarded + roll2.discarded,
        )
        cfg3 = TrainConfig(epochs=EPOCHS, batch_size=64, seed=3, step_size=3e-4)
        net, hist = train(combined, cfg3, net=net)
        save_network(net, net_path)
        print(f"stage 3: final train loss {hist['train'][-1]:.3e}, "
              f"best val loss {min(hist['val']):.3e} ({time.time() - t0:.0f}s)")

    # calibration spans the sampling box plus setpoint headroom, since the
    # correction rule can command powers above the nominal 3000 W ceiling
    rng = np.random.default_rng(3)
    calib = np.column_stack([
        rng.uniform(-150.0, 150.0, 4000),
        rng.uniform(-2000.0, 2000.0, 4000),
        rng.uniform(0.0, 4000.0, 4000),
    ])
    q_path = ARTIFACTS / "policy_q16.json"
    if q_path.exists():
        print("quantized policy: kept existing file")
    else:
        qnet = quantize(net, calib, word_bits=16)
        save_quantized(qnet, q_path)
        report = quantization_report(net, qnet, calib)
        print("quantized: max rel deviation", report["max_rel_deviation"],
              "saturations", report["saturation_events"])


if __name__ == "__main__":
    main()
