"""Shared fixtures: nominal converter, solver config, trained artifacts.

The trained policy network and its quantized form live in artifacts/ and
are regenerated by scripts/build_artifacts.py (slow: dataset generation
labels thousands of states by solving the horizon problem).  Tests load
them; if the files are missing the fixtures rebuild a small fallback so
the suite stays self-contained, at the cost of weaker tracking.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from resonmpc.nmpc import NmpcConfig
from resonmpc.plant import ConverterParams
from resonmpc.policy import Dataset, load_network
from resonmpc.quant import load_quantized

REPO_ROOT = Path(__file__).resolve().parent.parent
ARTIFACTS = REPO_ROOT / "artifacts"


@pytest.fixture(scope="session")
def params():
    return ConverterParams(v_s=230.0, l_r=19e-6, r_l=2.9, c_r=1440e-9)


@pytest.fixture(scope="session")
def nmpc_config():
    return NmpcConfig()


@pytest.fixture(scope="session")
def artifact_paths():
    needed = [
        ARTIFACTS / "train_trajectory.csv",
        ARTIFACTS / "train_random.csv",
        ARTIFACTS / "policy.json",
        ARTIFACTS / "policy_q16.json",
    ]
    if not all(p.exists() for p in needed):
        subprocess.run(
            [sys.executable, str(REPO_ROOT / "scripts" / "build_artifacts.py")],
            check=True,
        )
    return {p.stem: p for p in needed}


@pytest.fixture(scope="session")
def trajectory_dataset(artifact_paths):
    return Dataset.load_csv(artifact_paths["train_trajectory"])


@pytest.fixture(scope="session")
def random_dataset(artifact_paths):
    return Dataset.load_csv(artifact_paths["train_random"])


@pytest.fixture(scope="session")
def trained_net(artifact_paths):
    return load_network(artifact_paths["policy"])


@pytest.fixture(scope="session")
def trained_qnet(artifact_paths):
    return load_quantized(artifact_paths["policy_q16"])


@pytest.fixture(scope="session")
def sampling_box_points():
    """10,000 inputs drawn from the policy sampling box, fixed seed."""
    rng = np.random.default_rng(424242)
    return np.column_stack([
        rng.uniform(-150.0, 150.0, 10000),
        rng.uniform(-2000.0, 2000.0, 10000),
        rng.uniform(0.0, 4000.0, 10000),
    ])
