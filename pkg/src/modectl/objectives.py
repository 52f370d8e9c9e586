"""Task and oscillation losses over trajectories, with reverse-mode cotangents.

The task loss drives the end effector to a target at half period plus an
integrated squared-effort penalty; the oscillation loss enforces the
time-reversal symmetry and half-period rest that characterize an eigenmode.
Every loss returns the per-node cotangents that feed backprop_trajectory.

Max-type terms are evaluated on grid nodes only (the trajectories are smooth
at the default step size) and their subgradients route through the arg-max
sample, lowest index on ties, so training is deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import gravity_potential, spring_potential
from .integrator import TrajectoryCotangents


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective; all must be nonnegative."""

    alpha_task: float = 10.0
    alpha_eff: float = 1e-4
    lambda1: float = 0.05
    alpha1: float = 5e-4
    lambda2: float = 0.95
    beta: float = 1.0

    def __post_init__(self):
        for name in ("alpha_task", "alpha_eff", "lambda1", "alpha1", "lambda2", "beta"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class TaskSpec:
    """Pick-and-place task: start at rest at q0, reach h_star at period/2."""

    q0: np.ndarray
    h_star: np.ndarray
    period: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "h_star", np.asarray(self.h_star, dtype=float))
        if self.q0.shape != (2,) or self.h_star.shape != (2,):
            raise ValueError("q0 and h_star must be length-2 vectors")
        if not (
            np.all(np.isfinite(self.q0))
            and np.all(np.isfinite(self.h_star))
            and np.isfinite(self.period)
        ):
            raise ValueError("task fields must be finite")


def forward_kinematics(params, q):
    """Tip of the second link; both links have length d."""
    return params.d * np.array(
        [
            np.sin(q[0]) + np.sin(q[0] + q[1]),
            -np.cos(q[0]) - np.cos(q[0] + q[1]),
        ]
    )


def fk_jacobian(params, q):
    c1, c12 = np.cos(q[0]), np.cos(q[0] + q[1])
    s1, s12 = np.sin(q[0]), np.sin(q[0] + q[1])
    return params.d * np.array([[c1 + c12, c12], [s1 + s12, s12]])


def effort_integral(trajectory):
    """Trapezoid-rule integral of |u|^2 over the trajectory."""
    dt = trajectory.grid.dt
    sq = np.sum(trajectory.u * trajectory.u, axis=1)
    return float(np.trapezoid(sq, dx=dt))


def task_error(params, trajectory, spec):
    """Distance between the half-period end-effector position and the target."""
    q_mid = trajectory.q[trajectory.grid.midpoint_index]
    return float(np.linalg.norm(forward_kinematics(params, q_mid) - spec.h_star))


def loss_task(params, trajectory, spec, weights):
    """(1/2) a_task |h(q(T/2)) - h*|^2 + a_eff * integral |u|^2 dt."""
    grid = trajectory.grid
    mid = grid.midpoint_index
    cot = TrajectoryCotangents.zeros(grid.steps + 1)

    r = forward_kinematics(params, trajectory.q[mid]) - spec.h_star
    value = 0.5 * weights.alpha_task * float(r @ r)
    cot.q[mid] += weights.alpha_task * (fk_jacobian(params, trajectory.q[mid]).T @ r)

    w = np.full(grid.steps + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    value += weights.alpha_eff * effort_integral(trajectory)
    cot.u += (2.0 * weights.alpha_eff) * w[:, None] * trajectory.u
    return value, cot


def loss_eigen(trajectory, weights):
    """Soft eigenmode penalty.

    lambda1 * (max_i |q_i - q_{N-i}|_1 + alpha1 * max_i |p_i + p_{N-i}|_1)
    over the first half grid, plus (lambda2/2) |p_{N/2}|^2.
    """
    grid = trajectory.grid
    N = grid.steps
    half = grid.midpoint_index
    cot = TrajectoryCotangents.zeros(N + 1)

    idx = np.arange(half + 1)
    dq = trajectory.q[idx] - trajectory.q[N - idx]
    dp = trajectory.p[idx] + trajectory.p[N - idx]
    q_norms = np.sum(np.abs(dq), axis=1)
    p_norms = np.sum(np.abs(dp), axis=1)
    iq = int(np.argmax(q_norms))
    ip = int(np.argmax(p_norms))

    value = weights.lambda1 * (q_norms[iq] + weights.alpha1 * p_norms[ip])
    sq = np.sign(dq[iq])
    cot.q[iq] += weights.lambda1 * sq
    cot.q[N - iq] -= weights.lambda1 * sq
    sp = np.sign(dp[ip])
    cot.p[ip] += weights.lambda1 * weights.alpha1 * sp
    cot.p[N - ip] += weights.lambda1 * weights.alpha1 * sp

    p_mid = trajectory.p[half]
    value += 0.5 * weights.lambda2 * float(p_mid @ p_mid)
    cot.p[half] += weights.lambda2 * p_mid
    return value, cot


def loss_total(params, trajectory, spec, weights):
    """Task loss plus beta times the eigenmode loss, cotangents summed."""
    t_val, t_cot = loss_task(params, trajectory, spec, weights)
    e_val, e_cot = loss_eigen(trajectory, weights)
    cot = TrajectoryCotangents(
        q=t_cot.q + weights.beta * e_cot.q,
        p=t_cot.p + weights.beta * e_cot.p,
        u=t_cot.u + weights.beta * e_cot.u,
    )
    return t_val + weights.beta * e_val, cot


@dataclass
class CertificationReport:
    """Outcome of the eigenmode checks on a trajectory."""

    periodic: bool
    symmetric: bool
    line_shaped: bool
    is_eigenmode: bool
    midpoint_momentum: float
    closure_error: float
    q_symmetry: float
    p_symmetry: float
    line_clearance: float

    def to_dict(self):
        return {
            "periodic": self.periodic,
            "symmetric": self.symmetric,
            "line_shaped": self.line_shaped,
            "is_eigenmode": self.is_eigenmode,
            "midpoint_momentum": self.midpoint_momentum,
            "closure_error": self.closure_error,
            "q_symmetry": self.q_symmetry,
            "p_symmetry": self.p_symmetry,
            "line_clearance": self.line_clearance,
        }


def _half_arc_clearance(q_samples):
    # Self-intersection measure of the half-period configuration arc: the
    # closest spatial approach between points that are far apart *along* the
    # arc.  Near zero for an arc that crosses or closes on itself; the
    # constant (equilibrium) trajectory scores infinite.
    half = q_samples[: len(q_samples) // 2 + 1]
    steps = np.linalg.norm(np.diff(half, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    total = arc[-1]
    if total < 1e-9:  # constant trajectory
        return float("inf")
    separation = 0.25 * total
    diff = half[:, None, :] - half[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    far = np.abs(arc[:, None] - arc[None, :]) >= separation
    if not np.any(far):
        return float("inf")
    return float(dist[far].min())


def _retrace_error(q_samples):
    # How far the second half of the period is from retracing the first:
    # zero for a back-and-forth (line-shaped) motion, of the order of the
    # orbit diameter for a loop that is traversed once per period.
    n = len(q_samples) - 1
    idx = np.arange(n // 2 + 1)
    return float(
        np.max(np.linalg.norm(q_samples[idx] - q_samples[n - idx], axis=1))
    )


def certify_eigenmode(trajectory, tol_p=1e-2, tol_q=1e-2, tol_line=0.02):
    """Check periodicity, time-reversal symmetry and line-shapedness.

    The configuration image is line-shaped when the motion retraces one
    simple arc: the second half of the period must revisit the first half
    (within tol_line) and the half-period arc must keep a self-intersection
    clearance above tol_line.  A once-traversed loop fails the retrace
    check; an arc that crosses itself fails the clearance check.  All
    tolerances are heuristics in trajectory units.
    """
    grid = trajectory.grid
    N = grid.steps
    half = grid.midpoint_index

    p_mid = float(np.linalg.norm(trajectory.p[half]))
    closure = float(np.linalg.norm(trajectory.q[N] - trajectory.q[0]))
    periodic = p_mid < tol_p and closure < tol_q

    idx = np.arange(half + 1)
    q_sym = float(
        np.max(np.sum(np.abs(trajectory.q[idx] - trajectory.q[N - idx]), axis=1))
    )
    p_sym = float(
        np.max(np.sum(np.abs(trajectory.p[idx] + trajectory.p[N - idx]), axis=1))
    )
    symmetric = q_sym < tol_q and p_sym < tol_p

    clearance = _half_arc_clearance(trajectory.q)
    line_shaped = clearance > tol_line and _retrace_error(trajectory.q) < tol_line

    return CertificationReport(
        periodic=periodic,
        symmetric=symmetric,
        line_shaped=line_shaped,
        is_eigenmode=periodic and symmetric and line_shaped,
        midpoint_momentum=p_mid,
        closure_error=closure,
        q_symmetry=q_sym,
        p_symmetry=p_sym,
        line_clearance=clearance,
    )


def potential_surface(params, net, n):
    """Sample the learned and open-loop potentials on an n-by-n grid over
    [-pi, pi]^2. Returns an (n*n, 6) array with columns
    q1, q2, V_theta, V_gravity, V_spring, V_total."""
    axis = np.linspace(-np.pi, np.pi, n)
    rows = np.empty((n * n, 6))
    r = 0
    for q1 in axis:
        for q2 in axis:
            q = np.array([q1, q2])
            vt = net.value(q)
            vg = gravity_potential(params, q)
            vs = spring_potential(params, q)
            rows[r] = (q1, q2, vt, vg, vs, vt + vg + vs)
            r += 1
    return rows
