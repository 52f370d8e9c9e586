"""Gradient-descent training of the control potential (and optionally the
period), plus grid sweeps over single hyperparameters.

One epoch is one full rollout from the task's initial configuration: the
"dataset" is a single initial condition, so there is no minibatching.  The
period, when learnable, is optimized as log(period) to keep it positive.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import save_checkpoint
from .integrator import TimeGrid, TrajectoryCotangents, backprop_trajectory, rollout
from .objectives import (
    LossWeights,
    TaskSpec,
    certify_eigenmode,
    effort_integral,
    loss_eigen,
    loss_task,
    task_error,
)
from .potential import PotentialNet


class DivergedTrainingError(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


class Adam:
    """Bias-corrected Adam over a flat parameter vector."""

    def __init__(self, n_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    task: TaskSpec
    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    learnable_period: bool = False
    width: int = 256
    steps: int = 150
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")

    @property
    def grid(self):
        return TimeGrid(period=self.task.period, steps=self.steps)


@dataclass
class TrainRecord:
    epoch: int
    loss: float
    l_task: float
    l_eigen: float
    effort: float
    task_err: float
    period: float


@dataclass
class TrainResult:
    net: PotentialNet
    records: list
    trajectory: object
    certification: object
    period: float


LOG_HEADER = ["epoch", "loss", "l_task", "l_eigen", "effort", "task_err", "T"]


def _evaluate(params, net, config, period):
    traj = rollout(params, net, config.task.q0, TimeGrid(period, config.steps))
    t_val, t_cot = loss_task(params, traj, config.task, config.weights)
    e_val, e_cot = loss_eigen(traj, config.weights)
    beta = config.weights.beta
    cot = TrajectoryCotangents(
        q=t_cot.q + beta * e_cot.q,
        p=t_cot.p + beta * e_cot.p,
        u=t_cot.u + beta * e_cot.u,
    )
    return traj, t_val + beta * e_val, t_val, e_val, cot


def train(params, config, output_dir=None, tol_p=1e-2, tol_q=1e-2, tol_line=0.02):
    """Minimize the combined loss over the network parameters.

    Runs epochs of rollout -> loss -> backprop -> Adam.  When
    ``config.learnable_period`` is set, log(period) is optimized jointly with
    the network weights.  If ``output_dir`` is given, the per-epoch records
    stream to training_log.csv and a checkpoint is written every
    ``checkpoint_every`` epochs.  Raises DivergedTrainingError (after a final
    checkpoint) if the loss becomes non-finite.
    """
    net = PotentialNet.initialize(width=config.width, seed=config.seed)
    n_theta = net.n_params
    theta = net.to_flat()
    if config.learnable_period:
        theta = np.concatenate([theta, [np.log(config.task.period)]])
    adam = Adam(theta.size, config.beta1, config.beta2, config.eps)

    log_file = writer = None
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        log_file = open(os.path.join(output_dir, "training_log.csv"), "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)

    def write_checkpoint(current_net, period):
        if output_dir is not None:
            save_checkpoint(
                os.path.join(output_dir, "checkpoint.npz"),
                current_net,
                params,
                config.task.q0,
                period,
                config.seed,
            )

    records = []
    period = config.task.period
    try:
        for epoch in range(config.epochs):
            if config.learnable_period:
                period = float(np.exp(theta[-1]))
            traj, value, t_val, e_val, cot = _evaluate(params, net, config, period)
            if not np.isfinite(value):
                write_checkpoint(net, period)
                raise DivergedTrainingError(epoch)
            rec = TrainRecord(
                epoch=epoch,
                loss=value,
                l_task=t_val,
                l_eigen=e_val,
                effort=effort_integral(traj),
                task_err=task_error(params, traj, config.task),
                period=period,
            )
            records.append(rec)
            if writer is not None:
                writer.writerow(
                    [rec.epoch] + [format(v, ".10g") for v in (
                        rec.loss, rec.l_task, rec.l_eigen, rec.effort,
                        rec.task_err, rec.period,
                    )]
                )

            sens = backprop_trajectory(
                params, net, traj, cot, period_sensitivity=config.learnable_period
            )
            grad = sens.d_theta
            if config.learnable_period:
                # d/d(log T) = T * d/dT
                grad = np.concatenate([grad, [sens.d_period * period]])
            theta = adam.step(theta, grad, config.learning_rate)
            net = PotentialNet.from_flat(theta[:n_theta], config.width)

            if (
                output_dir is not None
                and config.checkpoint_every > 0
                and (epoch + 1) % config.checkpoint_every == 0
            ):
                write_checkpoint(net, period)
    finally:
        if log_file is not None:
            log_file.close()

    if config.learnable_period:
        period = float(np.exp(theta[-1]))
    final_traj = rollout(params, net, config.task.q0, TimeGrid(period, config.steps))
    cert = certify_eigenmode(final_traj, tol_p=tol_p, tol_q=tol_q, tol_line=tol_line)
    write_checkpoint(net, period)
    return TrainResult(
        net=net,
        records=records,
        trajectory=final_traj,
        certification=cert,
        period=period,
    )


SWEEPABLE = ("alpha_eff", "T", "q0", "h_star", "seed")


def apply_sweep_value(config, name, value):
    """Return a copy of config with one sweepable parameter replaced."""
    if name == "alpha_eff":
        return replace(config, weights=replace(config.weights, alpha_eff=float(value)))
    if name == "T":
        return replace(config, task=replace(config.task, period=float(value)))
    if name == "q0":
        return replace(config, task=replace(config.task, q0=np.asarray(value, float)))
    if name == "h_star":
        return replace(
            config, task=replace(config.task, h_star=np.asarray(value, float))
        )
    if name == "seed":
        return replace(config, seed=int(value))
    raise ValueError(f"unknown sweep parameter {name!r}; expected one of {SWEEPABLE}")


def _format_value(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return "_".join(format(float(v), "g") for v in np.asarray(value).ravel())
    return format(value, "g") if isinstance(value, float) else str(value)


def _sweep_worker(args):
    params, config, run_dir = args
    try:
        result = train(params, config, output_dir=run_dir)
    except Exception as exc:  # isolate failures per run
        return {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
    result.trajectory.to_csv(os.path.join(run_dir, "trajectory.csv"))
    last = result.records[-1] if result.records else None
    return {
        "status": "ok",
        "loss": last.loss if last else None,
        "task_err": task_error(params, result.trajectory, config.task),
        "effort": effort_integral(result.trajectory),
        "period": result.period,
        "certified": result.certification.is_eigenmode,
    }


def sweep(params, base_config, parameter_name, values, output_dir, jobs=1):
    """Run independent trainings over a value grid of one parameter.

    Each run writes into its own subdirectory; failures are recorded in the
    returned entries without aborting the remaining runs.
    """
    if parameter_name not in SWEEPABLE:
        raise ValueError(
            f"unknown sweep parameter {parameter_name!r}; expected one of {SWEEPABLE}"
        )
    if len(values) == 0:
        raise ValueError("sweep needs at least one value")
    os.makedirs(output_dir, exist_ok=True)

    tasks = []
    entries = []
    for value in values:
        run_dir = os.path.join(
            output_dir, f"{parameter_name}={_format_value(value)}"
        )
        config = apply_sweep_value(base_config, parameter_name, value)
        tasks.append((params, config, run_dir))
        entries.append({"parameter": parameter_name,
                        "value": np.asarray(value).tolist() if not np.isscalar(value) else value,
                        "dir": os.path.basename(run_dir)})

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_worker, tasks))
    else:
        outcomes = [_sweep_worker(t) for t in tasks]

    for entry, outcome in zip(entries, outcomes):
        entry.update(outcome)
    return entries
