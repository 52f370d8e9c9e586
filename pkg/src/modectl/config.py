"""Run configuration, read from one nested YAML file.

Every value defaults to the reference experiment settings; only the task
endpoints (task.q0 and task.h_star) are required, since the method needs a
start configuration and a target to be meaningful.
"""

from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from .dynamics import PendulumParams
from .objectives import LossWeights, TaskSpec
from .stabilizer import ControllerGains
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or missing run configuration."""


@dataclass(frozen=True)
class CertTolerances:
    """Heuristic eigenmode-certification tolerances, in trajectory units."""

    tol_p: float = 1e-2
    tol_q: float = 1e-2
    tol_line: float = 0.02


@dataclass(frozen=True)
class StabilizeSettings:
    reference_samples: int = 1000
    steps_per_period: int = 500


@dataclass(frozen=True)
class RunConfig:
    pendulum: PendulumParams
    train: TrainConfig
    gains: ControllerGains = field(default_factory=ControllerGains)
    tolerances: CertTolerances = field(default_factory=CertTolerances)
    stabilize: StabilizeSettings = field(default_factory=StabilizeSettings)
    output_dir: str = "runs"


_SECTION_KEYS = {
    "pendulum": {"m", "d", "g", "k", "b"},
    "net": {"width", "seed"},
    "grid": {"steps"},
    "weights": {"alpha_task", "alpha_eff", "lambda1", "alpha1", "lambda2", "beta"},
    "task": {"q0", "h_star", "T"},
    "train": {
        "epochs",
        "learning_rate",
        "beta1",
        "beta2",
        "eps",
        "learnable_T",
        "checkpoint_every",
    },
    "gains": {"alpha_E", "alpha_M", "b"},
    "tolerances": {"tol_p", "tol_q", "tol_line"},
    "stabilize": {"reference_samples", "steps_per_period"},
}


def _section(data, name):
    sec = data.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sec) - _SECTION_KEYS[name]
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return sec


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = set(_SECTION_KEYS) | {"output_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    task_sec = _section(data, "task")
    if "q0" not in task_sec or "h_star" not in task_sec:
        raise ConfigError("task.q0 and task.h_star are required")

    try:
        pendulum = PendulumParams(**_section(data, "pendulum"))
        weights = LossWeights(**_section(data, "weights"))
        task = TaskSpec(
            q0=np.asarray(task_sec["q0"], dtype=float),
            h_star=np.asarray(task_sec["h_star"], dtype=float),
            period=float(task_sec.get("T", 1.5)),
        )
        net_sec = _section(data, "net")
        grid_sec = _section(data, "grid")
        train_sec = dict(_section(data, "train"))
        if "learnable_T" in train_sec:
            train_sec["learnable_period"] = bool(train_sec.pop("learnable_T"))
        train = TrainConfig(
            task=task,
            weights=weights,
            width=int(net_sec.get("width", 256)),
            seed=int(net_sec.get("seed", 0)),
            steps=int(grid_sec.get("steps", 150)),
            **train_sec,
        )
        gains = ControllerGains(**_section(data, "gains"))
        tolerances = CertTolerances(**_section(data, "tolerances"))
        stabilize = StabilizeSettings(**_section(data, "stabilize"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(
        pendulum=pendulum,
        train=train,
        gains=gains,
        tolerances=tolerances,
        stabilize=stabilize,
        output_dir=str(data.get("output_dir", "runs")),
    )


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(cfg):
    """JSON-friendly snapshot of a RunConfig (for manifests)."""

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        return obj

    return clean(asdict(cfg))
