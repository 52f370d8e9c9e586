import os
from types import SimpleNamespace

import numpy as np
import pytest

from modectl import PendulumParams, PotentialNet, TaskSpec, TrainConfig, train

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MAIN_CONFIG = os.path.join(REPO_ROOT, "configs", "main.yaml")

# the reference experiment's task endpoints (same as configs/main.yaml)
DEFAULT_Q0 = np.array([-0.37, 0.95])
DEFAULT_H_STAR = np.array([-0.06, -1.93])


@pytest.fixture(scope="session")
def params():
    return PendulumParams()


@pytest.fixture(scope="session")
def default_task():
    return TaskSpec(q0=DEFAULT_Q0, h_star=DEFAULT_H_STAR, period=1.5)


@pytest.fixture(scope="session")
def small_net():
    return PotentialNet.initialize(width=16, seed=7)


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, params, default_task):
    """One full reference training run, shared by every test that needs a
    certified mode (training takes tens of seconds, so it runs once)."""
    out = tmp_path_factory.mktemp("trained")
    config = TrainConfig(task=default_task, epochs=500, seed=0)
    result = train(params, config, output_dir=str(out))
    return SimpleNamespace(result=result, config=config, out=out)
