"""Feedback that stabilizes the learned oscillation mode, and its local
stability certification.

The feedback splits into an energy-steering term along the normalized
momentum, a momentum-shaping term projected so it injects exactly zero
mechanical power, and an optional viscous damping term.  Local orbital
stability is certified through per-component contraction ratios of the
period map, estimated by central finite differences of the distance to the
reference mode.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import State, mass_matrix_inverse
from .integrator import TimeGrid, rollout, rollout_controlled, _energy

# below this value of p^T M^-1 p the momentum direction is ill defined and
# both feedback terms are switched off
MOMENTUM_FORM_THRESHOLD = 1e-10


@dataclass(frozen=True)
class ControllerGains:
    """Feedback gains; all nonnegative, b = 0 means no damping."""

    alpha_E: float = 1.0
    alpha_M: float = 10.0
    b: float = 0.0

    def __post_init__(self):
        if self.alpha_E < 0.0 or self.alpha_M < 0.0 or self.b < 0.0:
            raise ValueError("gains must be nonnegative")


@dataclass(frozen=True)
class ReferenceMode:
    """Densely sampled mode over one period, with its energy level.

    The samples come from an autonomous rollout of the shaped system, so the
    stored energy level matches every sample up to integration error.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy_level: float
    period: float


class ReferencePoint(NamedTuple):
    index: int
    time: float
    q: np.ndarray
    p: np.ndarray


def reference_mode_from_trajectory(trajectory):
    """Turn a one-period autonomous rollout into a reference mode; the
    duplicate end node is dropped."""
    return ReferenceMode(
        times=trajectory.grid.times()[:-1],
        q=trajectory.q[:-1].copy(),
        p=trajectory.p[:-1].copy(),
        energy_level=float(trajectory.energy[0]),
        period=trajectory.grid.period,
    )


def build_reference_mode(params, net, q0, period, samples=1000):
    """Sample the autonomous shaped trajectory from rest at q0."""
    traj = rollout(params, net, q0, TimeGrid(period=period, steps=samples))
    return reference_mode_from_trajectory(traj)


def nearest_reference(mode, q):
    """Sample minimizing the Euclidean configuration distance to q.

    Exhaustive scan; ties resolve to the lowest index, so lookups are
    deterministic.
    """
    diff = mode.q - np.asarray(q, dtype=float)
    j = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
    return ReferencePoint(index=j, time=float(mode.times[j]), q=mode.q[j], p=mode.p[j])


def momentum_sign(params, q, p, p_bar):
    """sign(p^T M^-1(q) p_bar): alignment of the momentum with the reference."""
    Mi = mass_matrix_inverse(params, q)
    return float(np.sign(p @ Mi @ p_bar))


def energy_feedback(params, net, state, energy_level, alpha_E):
    """Force alpha_E (E_bar - E) p_hat along the normalized momentum.

    Returns zero at (numerically) zero momentum, where the direction is
    undefined.
    """
    q, p = state.q, state.p
    Mi = mass_matrix_inverse(params, q)
    pmp = float(p @ Mi @ p)
    if pmp < MOMENTUM_FORM_THRESHOLD:
        return np.zeros(2)
    energy = _energy(params, net, q, p)
    return alpha_E * (energy_level - energy) / np.sqrt(pmp) * p


def momentum_projection(params, q, p, x):
    """Project x to inject zero power: x - (p^T M^-1 x)/(p^T M^-1 p) p."""
    Mi = mass_matrix_inverse(params, q)
    pmp = float(p @ Mi @ p)
    if pmp < MOMENTUM_FORM_THRESHOLD:
        return np.zeros(2)
    return x - (float(p @ Mi @ x) / pmp) * p


def mode_feedback(params, state, p_bar, sigma, alpha_M):
    """Force alpha_M * proj(sigma p_bar), zero-power by construction."""
    return alpha_M * momentum_projection(params, state.q, state.p, sigma * p_bar)


def stabilizing_feedback(params, net, mode, state, gains):
    """Energy feedback + mode feedback, minus optional viscous damping."""
    ref = nearest_reference(mode, state.q)
    sigma = momentum_sign(params, state.q, state.p, ref.p)
    u = energy_feedback(params, net, state, mode.energy_level, gains.alpha_E)
    u = u + mode_feedback(params, state, ref.p, sigma, gains.alpha_M)
    if gains.b > 0.0:
        u = u - gains.b * (mass_matrix_inverse(params, state.q) @ state.p)
    return u


@dataclass
class ClosedLoopResult:
    """Simulation plus per-node distances to the reference mode."""

    trajectory: object
    e_err: np.ndarray
    q_dist: np.ndarray
    p_dist: np.ndarray

    def to_csv(self, path):
        t = self.trajectory.grid.times()
        with open(path, "w") as fh:
            fh.write("t,E_err,q_dist,p_dist,q1,q2,p1,p2,u1,u2\n")
            for i in range(len(t)):
                row = (
                    t[i],
                    self.e_err[i],
                    self.q_dist[i],
                    self.p_dist[i],
                    self.trajectory.q[i, 0],
                    self.trajectory.q[i, 1],
                    self.trajectory.p[i, 0],
                    self.trajectory.p[i, 1],
                    self.trajectory.u[i, 0],
                    self.trajectory.u[i, 1],
                )
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def mode_metrics(params, mode, q, p, energy):
    """|E - E_bar|, configuration distance and sign-corrected momentum
    distance to the nearest reference sample."""
    ref = nearest_reference(mode, q)
    sigma = momentum_sign(params, q, p, ref.p)
    return (
        abs(energy - mode.energy_level),
        float(np.linalg.norm(q - ref.q)),
        float(np.linalg.norm(p - sigma * ref.p)),
    )


def simulate_closed_loop(params, net, mode, state0, gains, periods, steps_per_period=500):
    """Run the stabilized system and track convergence to the mode."""

    def controller(q, p):
        return stabilizing_feedback(params, net, mode, State(q=q, p=p), gains)

    traj = rollout_controlled(
        params,
        net,
        state0,
        duration=periods * mode.period,
        dt=mode.period / steps_per_period,
        controller=controller,
    )
    n = traj.grid.steps + 1
    e_err = np.empty(n)
    q_dist = np.empty(n)
    p_dist = np.empty(n)
    for i in range(n):
        e_err[i], q_dist[i], p_dist[i] = mode_metrics(
            params, mode, traj.q[i], traj.p[i], traj.energy[i]
        )
    return ClosedLoopResult(trajectory=traj, e_err=e_err, q_dist=q_dist, p_dist=p_dist)


def mode_curve_distance(mode, x):
    """Distance of a phase-space point to the mode viewed as a closed curve.

    The sampled mode is treated as a closed polyline in (q, p) space and the
    minimum point-to-segment distance is returned.  Unlike the per-sample
    configuration lookup, this function is continuous in x and its gradient
    is transverse to the orbit, which the finite-difference stability probes
    rely on.  In phase space the two traversal directions of the mode are
    distinct branches, so no momentum sign correction is needed.
    """
    pts = np.hstack([mode.q, mode.p])
    seg = np.roll(pts, -1, axis=0) - pts
    w = np.asarray(x, dtype=float) - pts
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    t = np.einsum("ij,ij->i", w, seg) / np.maximum(seg_len2, 1e-300)
    t = np.clip(t, 0.0, 1.0)
    residual = w - t[:, None] * seg
    d2 = np.einsum("ij,ij->i", residual, residual)
    return float(np.sqrt(d2.min()))


def find_orbit_point(params, net, mode, gains, state0, settle_periods=10,
                     steps_per_period=500):
    """Settle onto the stabilized orbit, then return the node of the final
    period closest to the reference's fastest sample.

    The fastest point is used (rather than the rest extremum that starts the
    mode) because nearest-sample lookups are best conditioned where the
    samples are widest apart; at the extremum the samples cluster and the
    distance function is numerically ragged.
    """
    sim = simulate_closed_loop(
        params, net, mode, state0, gains, settle_periods, steps_per_period
    )
    traj = sim.trajectory
    start = max(0, traj.grid.steps - steps_per_period)
    j_fast = int(np.argmax(np.einsum("ij,ij->i", mode.p, mode.p)))
    target = np.concatenate([mode.q[j_fast], mode.p[j_fast]])
    nodes = np.hstack([traj.q[start:], traj.p[start:]])
    j = start + int(np.argmin(np.sum((nodes - target) ** 2, axis=1)))
    return State(q=traj.q[j], p=traj.p[j])


@dataclass
class MultiplierEntry:
    """One per-component contraction ratio of the period map."""

    component: int
    numerator: float
    denominator: float
    ratio: float
    defined: bool

    def to_dict(self):
        return {
            "component": self.component,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "ratio": self.ratio,
            "defined": self.defined,
        }


def cycle_multipliers(params, net, mode, gains, x0, fd_step=1e-5,
                      steps_per_period=500, denominator_threshold=0.1):
    """Per-component contraction ratios of the period-T map near x0.

    The distance of a state to the mode curve is probed component by
    component: the central-difference derivative of the distance after one
    period is divided by the derivative before the period.  A magnitude
    below one in every defined component certifies local orbital stability;
    components whose denominator is below the threshold (directions the
    curve distance is insensitive to) are reported undefined.
    """

    def controller(q, p):
        return stabilizing_feedback(params, net, mode, State(q=q, p=p), gains)

    def flow_one_period(x):
        traj = rollout_controlled(
            params,
            net,
            State(q=x[:2], p=x[2:]),
            duration=mode.period,
            dt=mode.period / steps_per_period,
            controller=controller,
        )
        return np.concatenate([traj.q[-1], traj.p[-1]])

    base = np.concatenate([np.asarray(x0.q, float), np.asarray(x0.p, float)])

    def dist(x):
        return mode_curve_distance(mode, x)

    entries = []
    for i in range(4):
        step = np.zeros(4)
        step[i] = fd_step
        x_plus = base + step
        x_minus = base - step
        den = (dist(x_plus) - dist(x_minus)) / (2.0 * fd_step)
        num = (dist(flow_one_period(x_plus)) - dist(flow_one_period(x_minus))) / (
            2.0 * fd_step
        )
        defined = abs(den) > denominator_threshold
        entries.append(
            MultiplierEntry(
                component=i,
                numerator=num,
                denominator=den,
                ratio=(num / den) if defined else float("nan"),
                defined=defined,
            )
        )
    return entries
