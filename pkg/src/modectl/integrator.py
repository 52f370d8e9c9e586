"""Fixed-step RK4 propagation of the shaped pendulum and its discrete adjoint.

The forward rollouts integrate the autonomous system whose total potential is
the open-loop gravity/spring potential plus the learned potential, optionally
with an external feedback force.  The backward pass differentiates the
*discrete* RK4 map exactly (reverse mode through every stage), so gradient
checks against finite differences are limited only by FD truncation error.

The stage evaluations are written out in scalar form and the parameter
contractions are batched at the end of the sweep: a training epoch calls this
code a few hundred times per step, so the inner loop stays lean.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import HALF_PI, State


class NonFiniteStateError(RuntimeError):
    """A state entry became non-finite during integration."""

    def __init__(self, step):
        super().__init__(f"non-finite state at integration step {step}")
        self.step = step


class ShapeMismatchError(ValueError):
    """Cotangent arrays do not match the trajectory layout."""


class NonPositivePeriodError(ValueError):
    """The (learnable) period must stay positive."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid over one period: N steps of size dt = period/steps.

    steps must be even so that period/2 falls exactly on a node; both the
    task loss and the oscillation loss sample the midpoint.
    """

    period: float
    steps: int

    def __post_init__(self):
        if not self.period > 0.0:
            raise NonPositivePeriodError(f"period must be positive, got {self.period}")
        if self.steps < 2 or self.steps % 2 != 0:
            raise ValueError(f"steps must be even and >= 2, got {self.steps}")

    @property
    def dt(self):
        return self.period / self.steps

    @property
    def midpoint_index(self):
        return self.steps // 2

    def times(self):
        return np.arange(self.steps + 1) * self.dt


@dataclass
class Trajectory:
    """States, applied forces and energies over a uniform grid.

    q, p, u have shape (steps+1, 2); energy has shape (steps+1,).  For the
    autonomous training rollout u is the learned-potential gradient sampled
    along the path; for controlled rollouts it is the external feedback.
    energy is the closed-loop total energy (kinetic + open-loop potential +
    learned potential).
    """

    grid: TimeGrid
    q: np.ndarray
    p: np.ndarray
    u: np.ndarray
    energy: np.ndarray

    def state_at(self, i):
        return State(q=self.q[i], p=self.p[i])

    def to_csv(self, path):
        t = self.grid.times()
        with open(path, "w") as fh:
            fh.write("t,q1,q2,p1,p2,u1,u2,E\n")
            for i in range(len(t)):
                row = (
                    t[i],
                    self.q[i, 0],
                    self.q[i, 1],
                    self.p[i, 0],
                    self.p[i, 1],
                    self.u[i, 0],
                    self.u[i, 1],
                    self.energy[i],
                )
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")


@dataclass
class TrajectoryCotangents:
    """Per-node loss derivatives with respect to q, p and u samples."""

    q: np.ndarray
    p: np.ndarray
    u: np.ndarray

    @classmethod
    def zeros(cls, n_nodes):
        return cls(
            q=np.zeros((n_nodes, 2)),
            p=np.zeros((n_nodes, 2)),
            u=np.zeros((n_nodes, 2)),
        )


@dataclass
class SensitivityResult:
    """Reverse-mode derivatives of a trajectory functional."""

    d_theta: np.ndarray
    d_period: Optional[float] = None


def _field(params, net, x, controller=None, jac=False):
    """Closed-loop vector field at x = (q1, q2, p1, p2).

    With jac=True also returns the scalars that parametrize the sparse 4x4
    state Jacobian (see _apply_jacobian_t) and the hidden activations, reused
    by the batched parameter contraction.  Controller contributions are
    excluded from the Jacobian: only autonomous rollouts are differentiated.
    """
    q1 = float(x[0])
    q2 = float(x[1])
    p1 = float(x[2])
    p2 = float(x[3])
    m, d, g, k = params.m, params.d, params.g, params.k
    md2 = m * d * d
    c = math.cos(q2)
    s = math.sin(q2)

    # inverse inertia A/(md2*D) and its q2-derivative
    D = 1.0 + s * s
    den = md2 * D
    i11 = 1.0 / den
    i12 = -(1.0 + c) / den
    i22 = (3.0 + 2.0 * c) / den
    Dp = 2.0 * s * c
    den2 = md2 * D * D
    d11 = -Dp / den2
    d12 = (s * D + (1.0 + c) * Dp) / den2
    d22 = (-2.0 * s * D - (3.0 + 2.0 * c) * Dp) / den2

    dq1 = i11 * p1 + i12 * p2
    dq2 = i12 * p1 + i22 * p2
    dK2 = 0.5 * (p1 * p1 * d11 + 2.0 * p1 * p2 * d12 + p2 * p2 * d22)

    mdg = m * d * g
    s1 = math.sin(q1)
    s12 = math.sin(q1 + q2)
    gV1 = mdg * (2.0 * s1 + s12)
    gV2 = mdg * s12 + 2.0 * k * (q2 - HALF_PI)

    q = x[:2]
    a = np.tanh(net.w1 @ q + net.b1)
    sh = 1.0 - a * a
    gnet = net.w1.T @ (net.w2 * sh)

    f = np.array((dq1, dq2, -gV1 - gnet[0], -dK2 - gV2 - gnet[1]))
    if controller is not None:
        f[2:4] += controller(q, x[2:])
    if not jac:
        return f

    # second q2-derivative of the inverse inertia
    Dpp = 2.0 * (c * c - s * s)
    den3 = md2 * D * D * D
    dd11 = (-Dpp * D + 2.0 * Dp * Dp) / den3
    dd12 = ((c * D + (1.0 + c) * Dpp) * D - 2.0 * Dp * (s * D + (1.0 + c) * Dp)) / den3
    dd22 = (
        (-2.0 * c * D - (3.0 + 2.0 * c) * Dpp) * D
        - 2.0 * Dp * (-2.0 * s * D - (3.0 + 2.0 * c) * Dp)
    ) / den3

    v1 = d11 * p1 + d12 * p2
    v2 = d12 * p1 + d22 * p2

    c1 = math.cos(q1)
    c12 = math.cos(q1 + q2)
    h11 = mdg * (2.0 * c1 + c12)
    h12 = mdg * c12
    h22 = mdg * c12 + 2.0 * k

    coef = -2.0 * net.w2 * a * sh
    Hnet = (net.w1 * coef[:, None]).T @ net.w1

    ddK2 = 0.5 * (p1 * p1 * dd11 + 2.0 * p1 * p2 * dd12 + p2 * p2 * dd22)
    jd = (
        v1,
        v2,
        i11,
        i12,
        i22,
        h11 + Hnet[0, 0],
        h12 + Hnet[0, 1],
        h22 + Hnet[1, 1] + ddK2,
    )
    return f, jd, a, sh


def _apply_jacobian_t(jd, mu):
    """J^T @ mu for the sparse Jacobian parametrized by jd.

    The full matrix is
        [[0,    v1,  i11, i12],
         [0,    v2,  i12, i22],
         [-g00, -g01, 0,  0  ],
         [-g01, -g11, -v1, -v2]]
    with g the symmetric Hessian block of the total potential (plus the
    kinetic q2 curvature in g11).
    """
    v1, v2, i11, i12, i22, g00, g01, g11 = jd
    m0 = mu[0]
    m1 = mu[1]
    m2 = mu[2]
    m3 = mu[3]
    return np.array(
        (
            -g00 * m2 - g01 * m3,
            v1 * m0 + v2 * m1 - g01 * m2 - g11 * m3,
            i11 * m0 + i12 * m1 - v1 * m3,
            i12 * m0 + i22 * m1 - v2 * m3,
        )
    )


def _jacobian(params, net, x):
    """Dense 4x4 state Jacobian (assembled from the sparse form)."""
    _, jd, _, _ = _field(params, net, x, jac=True)
    v1, v2, i11, i12, i22, g00, g01, g11 = jd
    return np.array(
        [
            [0.0, v1, i11, i12],
            [0.0, v2, i12, i22],
            [-g00, -g01, 0.0, 0.0],
            [-g01, -g11, -v1, -v2],
        ]
    )


def _energy(params, net, q, p):
    m, d, g, k = params.m, params.d, params.g, params.k
    c = math.cos(q[1])
    s = math.sin(q[1])
    den = m * d * d * (1.0 + s * s)
    kin = 0.5 * (
        p[0] * p[0] - 2.0 * (1.0 + c) * p[0] * p[1] + (3.0 + 2.0 * c) * p[1] * p[1]
    ) / den
    pot = (
        -m * d * g * (2.0 * math.cos(q[0]) + math.cos(q[0] + q[1]))
        + k * (q[1] - HALF_PI) ** 2
    )
    return kin + pot + net.value(q)


def _rk4_step(params, net, x, dt, controller=None):
    k1 = _field(params, net, x, controller)
    k2 = _field(params, net, x + (0.5 * dt) * k1, controller)
    k3 = _field(params, net, x + (0.5 * dt) * k2, controller)
    k4 = _field(params, net, x + dt * k3, controller)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(params, net, x0, dt, steps, controller, record_control):
    n = steps + 1
    qs = np.empty((n, 2))
    ps = np.empty((n, 2))
    us = np.empty((n, 2))
    es = np.empty(n)
    x = np.asarray(x0, dtype=float).copy()
    for i in range(n):
        qs[i] = x[:2]
        ps[i] = x[2:]
        us[i] = record_control(x[:2], x[2:])
        es[i] = _energy(params, net, x[:2], x[2:])
        if i == steps:
            break
        try:
            x = _rk4_step(params, net, x, dt, controller)
        except (ValueError, OverflowError) as exc:
            # math.* trig rejects inf/nan stage inputs once a state blows up
            raise NonFiniteStateError(i + 1) from exc
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(i + 1)
    return qs, ps, us, es


def rollout(params, net, q0, grid):
    """Integrate the autonomous shaped system from rest at q0 over one period.

    The recorded control samples are the learned-potential gradient along the
    path; the recorded energy is conserved up to RK4 truncation error.
    """
    q0 = np.asarray(q0, dtype=float)
    x0 = np.concatenate([q0, np.zeros(2)])
    qs, ps, us, es = _integrate(
        params,
        net,
        x0,
        grid.dt,
        grid.steps,
        controller=None,
        record_control=lambda q, p: net.input_gradient(q),
    )
    return Trajectory(grid=grid, q=qs, p=ps, u=us, energy=es)


def rollout_controlled(params, net, state0, duration, dt, controller):
    """Integrate the shaped system plus an external feedback u_s(q, p).

    The feedback is evaluated at every RK4 stage.  The step count is rounded
    (and bumped to even) so the grid stays a valid TimeGrid; the effective
    duration is steps*dt.
    """
    steps = max(2, int(round(duration / dt)))
    steps += steps % 2
    grid = TimeGrid(period=steps * dt, steps=steps)
    x0 = np.concatenate([np.asarray(state0.q, float), np.asarray(state0.p, float)])
    qs, ps, us, es = _integrate(
        params,
        net,
        x0,
        dt,
        steps,
        controller=controller,
        record_control=controller,
    )
    return Trajectory(grid=grid, q=qs, p=ps, u=us, energy=es)


def rollout_scaled(params, net, q0, period, steps):
    """Rollout with an explicitly optimizable period.

    Integrating ds = dt/period on the unit interval with the field scaled by
    the period reproduces, step for step, the plain rollout at dt =
    period/steps; the change of variables is exact for RK4.  The scaled form
    is what makes d(loss)/d(period) an ordinary parameter derivative in
    backprop_trajectory.
    """
    if not period > 0.0:
        raise NonPositivePeriodError(f"period must be positive, got {period}")
    return rollout(params, net, q0, TimeGrid(period=float(period), steps=steps))


def backprop_trajectory(params, net, trajectory, cotangents, period_sensitivity=False):
    """Exact reverse-mode derivative of the discrete rollout.

    Propagates adjoint states backward through every RK4 stage, contracting
    the given per-node cotangents on states and control samples into a flat
    parameter gradient (and, on request, the period derivative of the
    time-rescaled system).  The trajectory must come from rollout() /
    rollout_scaled() with the same params and net.
    """
    grid = trajectory.grid
    n_nodes = grid.steps + 1
    for name in ("q", "p", "u"):
        arr = getattr(cotangents, name)
        if arr.shape != (n_nodes, 2):
            raise ShapeMismatchError(
                f"cotangents.{name} has shape {arr.shape}, expected {(n_nodes, 2)}"
            )

    T = grid.period
    hs = 1.0 / grid.steps  # step of the time-rescaled system
    dt = grid.dt

    lam = np.zeros(4)
    g_period = 0.0
    # deferred parameter contraction: points, force cotangents and hidden
    # activations, batched into one call at the end of the sweep
    pjp_points = []
    pjp_cots = []
    pjp_a = []
    pjp_s = []

    def inject_control_cotangent(i, into_lambda=True):
        cu = cotangents.u[i]
        if cu[0] == 0.0 and cu[1] == 0.0:
            return
        qi = trajectory.q[i]
        a = np.tanh(net.w1 @ qi + net.b1)
        sh = 1.0 - a * a
        pjp_points.append(qi)
        pjp_cots.append(cu)
        pjp_a.append(a)
        pjp_s.append(sh)
        if into_lambda:
            coef = -2.0 * net.w2 * a * sh
            lam[0:2] += (net.w1 * coef[:, None]).T @ (net.w1 @ cu)

    for k in range(grid.steps, 0, -1):
        lam[0:2] += cotangents.q[k]
        lam[2:4] += cotangents.p[k]
        inject_control_cotangent(k)

        x = np.concatenate([trajectory.q[k - 1], trajectory.p[k - 1]])
        f1, jd1, a1, s1 = _field(params, net, x, jac=True)
        y2 = x + (0.5 * dt) * f1
        f2, jd2, a2, s2 = _field(params, net, y2, jac=True)
        y3 = x + (0.5 * dt) * f2
        f3, jd3, a3, s3 = _field(params, net, y3, jac=True)
        y4 = x + dt * f3
        f4, jd4, a4, s4 = _field(params, net, y4, jac=True)

        mu4 = (hs / 6.0) * lam
        mu3 = (hs / 3.0) * lam
        mu2 = (hs / 3.0) * lam
        mu1 = (hs / 6.0) * lam
        lam_x = lam.copy()

        # stage cotangents flow 4 -> 1; each stage is period * field(y)
        if period_sensitivity:
            g_period += float(mu4 @ f4)
        w = T * _apply_jacobian_t(jd4, mu4)
        pjp_points.append(y4[:2])
        pjp_cots.append(-T * mu4[2:4])
        pjp_a.append(a4)
        pjp_s.append(s4)
        lam_x += w
        mu3 += hs * w

        if period_sensitivity:
            g_period += float(mu3 @ f3)
        w = T * _apply_jacobian_t(jd3, mu3)
        pjp_points.append(y3[:2])
        pjp_cots.append(-T * mu3[2:4])
        pjp_a.append(a3)
        pjp_s.append(s3)
        lam_x += w
        mu2 += (0.5 * hs) * w

        if period_sensitivity:
            g_period += float(mu2 @ f2)
        w = T * _apply_jacobian_t(jd2, mu2)
        pjp_points.append(y2[:2])
        pjp_cots.append(-T * mu2[2:4])
        pjp_a.append(a2)
        pjp_s.append(s2)
        lam_x += w
        mu1 += (0.5 * hs) * w

        if period_sensitivity:
            g_period += float(mu1 @ f1)
        w = T * _apply_jacobian_t(jd1, mu1)
        pjp_points.append(x[:2])
        pjp_cots.append(-T * mu1[2:4])
        pjp_a.append(a1)
        pjp_s.append(s1)
        lam_x += w

        lam = lam_x

    # node 0: the state is a fixed initial condition, only the recorded
    # control sample u_0 = dV/dq(q_0) depends on the parameters
    inject_control_cotangent(0, into_lambda=False)

    g_theta = net.batch_gradient_products(
        np.array(pjp_points),
        np.array(pjp_cots),
        hidden=(np.array(pjp_a), np.array(pjp_s)),
    )
    return SensitivityResult(
        d_theta=g_theta, d_period=(g_period if period_sensitivity else None)
    )
