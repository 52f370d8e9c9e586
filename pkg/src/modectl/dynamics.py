"""Closed-form mechanics of the elastic double pendulum, in Hamiltonian form.

Two links of length ``d`` with point masses ``m`` at the tips, gravity acting
downward, and a linear torsion spring at the elbow joint whose rest angle is
pi/2.  State is (q, p) with joint angles q and generalized momenta p; the
configuration space is treated as R^2 (angles are never wrapped).

All functions here are pure; none mutate their arguments, so they are safe to
call concurrently.
"""

from dataclasses import dataclass

import numpy as np

HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants of the double pendulum.

    m : link point mass, kg
    d : link length, m
    g : gravitational acceleration, m/s^2
    k : elbow spring stiffness, N*m/rad (rest angle pi/2)
    b : viscous damping coefficient, N*m*s/rad (0 = conservative)
    """

    m: float = 1.0
    d: float = 1.0
    g: float = 9.81
    k: float = 0.5
    b: float = 0.0

    def __post_init__(self):
        if not (self.m > 0.0 and self.d > 0.0):
            raise ValueError("m and d must be positive")
        if self.g < 0.0 or self.k < 0.0 or self.b < 0.0:
            raise ValueError("g, k and b must be nonnegative")


@dataclass(frozen=True)
class State:
    """Phase-space point (q, p). Both arrays have the same length n >= 1."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        if q.shape != p.shape or q.ndim != 1 or q.size < 1:
            raise ValueError("q and p must be 1-d arrays of equal length >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state entries must be finite")


@dataclass(frozen=True)
class VectorField:
    """Time derivative (dq, dp) of a State."""

    dq: np.ndarray
    dp: np.ndarray


def mass_matrix(params, q):
    """Inertia tensor M(q) = m d^2 [[3+2c, 1+c], [1+c, 1]] with c = cos q2."""
    c = np.cos(q[1])
    md2 = params.m * params.d ** 2
    return md2 * np.array([[3.0 + 2.0 * c, 1.0 + c], [1.0 + c, 1.0]])


def _inv_pieces(q):
    # adjugate/denominator split of M^-1; det M = m^2 d^4 (1 + sin^2 q2)
    c = np.cos(q[1])
    s = np.sin(q[1])
    A = np.array([[1.0, -(1.0 + c)], [-(1.0 + c), 3.0 + 2.0 * c]])
    D = 1.0 + s * s
    return A, D, c, s


def mass_matrix_inverse(params, q):
    """Closed-form M(q)^-1; well defined for all q (det M >= m^2 d^4 > 0)."""
    A, D, _, _ = _inv_pieces(q)
    return A / (params.m * params.d ** 2 * D)


def mass_matrix_inverse_dq2(params, q):
    """d(M^-1)/dq2; only q2 enters M, so this is the full configuration
    derivative of the inverse inertia."""
    A, D, c, s = _inv_pieces(q)
    Ap = np.array([[0.0, s], [s, -2.0 * s]])
    Dp = 2.0 * s * c
    return (Ap * D - A * Dp) / (params.m * params.d ** 2 * D * D)


def mass_matrix_inverse_dq2q2(params, q):
    """d^2(M^-1)/dq2^2, needed for the state Jacobian of the dynamics."""
    A, D, c, s = _inv_pieces(q)
    Ap = np.array([[0.0, s], [s, -2.0 * s]])
    App = np.array([[0.0, c], [c, -2.0 * c]])
    Dp = 2.0 * s * c
    Dpp = 2.0 * (c * c - s * s)
    num = (App * D - A * Dpp) * D - 2.0 * Dp * (Ap * D - A * Dp)
    return num / (params.m * params.d ** 2 * D ** 3)


def gravity_potential(params, q):
    """-m d g (2 cos q1 + cos(q1+q2)), zero level at the horizontal."""
    return -params.m * params.d * params.g * (2.0 * np.cos(q[0]) + np.cos(q[0] + q[1]))


def spring_potential(params, q):
    """k (q2 - pi/2)^2 torsion spring at the elbow."""
    dq = q[1] - HALF_PI
    return params.k * dq * dq


def open_loop_potential(params, q):
    """Conservative gravity + spring potential (no learned term)."""
    return gravity_potential(params, q) + spring_potential(params, q)


def open_loop_potential_grad(params, q):
    """Gradient of the open-loop potential with respect to q."""
    mdg = params.m * params.d * params.g
    s1 = np.sin(q[0])
    s12 = np.sin(q[0] + q[1])
    return np.array(
        [
            mdg * (2.0 * s1 + s12),
            mdg * s12 + 2.0 * params.k * (q[1] - HALF_PI),
        ]
    )


def open_loop_potential_hess(params, q):
    """Hessian of the open-loop potential."""
    mdg = params.m * params.d * params.g
    c1 = np.cos(q[0])
    c12 = np.cos(q[0] + q[1])
    return np.array(
        [
            [mdg * (2.0 * c1 + c12), mdg * c12],
            [mdg * c12, mdg * c12 + 2.0 * params.k],
        ]
    )


def kinetic_energy(params, q, p):
    """K = (1/2) p^T M(q)^-1 p."""
    Mi = mass_matrix_inverse(params, q)
    return 0.5 * float(p @ Mi @ p)


def kinetic_grad_q(params, q, p):
    """dK/dq; the first component vanishes because M depends on q2 only."""
    dMi = mass_matrix_inverse_dq2(params, q)
    return np.array([0.0, 0.5 * float(p @ dMi @ p)])


def hamiltonian(params, state, v_theta_value=0.0):
    """Total mechanical energy K + V_gravity + V_spring plus an optional
    control-potential value evaluated elsewhere."""
    return (
        kinetic_energy(params, state.q, state.p)
        + open_loop_potential(params, state.q)
        + v_theta_value
    )


def vector_field(params, state, u=None):
    """Controlled Hamiltonian vector field.

    dq = M^-1(q) p
    dp = -dK/dq - dV/dq + u

    with V the open-loop (gravity + spring) potential and u a generalized
    force collocated with q (zero if omitted).
    """
    q, p = state.q, state.p
    dq = mass_matrix_inverse(params, q) @ p
    dp = -kinetic_grad_q(params, q, p) - open_loop_potential_grad(params, q)
    if u is not None:
        dp = dp + np.asarray(u, dtype=float)
    return VectorField(dq=dq, dp=dp)
