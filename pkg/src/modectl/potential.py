"""Learnable control potential: a one-hidden-layer tanh network R^2 -> R.

The network is V(q) = w2 . tanh(W1 q + b1) + b2 with a linear output layer.
Everything the optimizer needs is provided in closed form: the value, the
input gradient (which acts as the feedback force), the input Hessian, and
vector-Jacobian products against the flat parameter vector.

Flat parameter layout (used by the optimizer and by checkpoints):
    [W1 row-major (width*2), b1 (width), w2 (width), b2 (1)]
"""

import numpy as np


class PotentialNet:
    """One-hidden-layer tanh network with analytic derivatives.

    Parameters are immutable during evaluation; create a new instance (via
    ``from_flat``) to change them.
    """

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = float(b2)
        if self.w1.ndim != 2 or self.w1.shape[1] != 2 or self.w1.shape[0] < 1:
            raise ValueError("w1 must have shape (width, 2) with width >= 1")
        if self.b1.shape != (self.width,) or self.w2.shape != (self.width,):
            raise ValueError("b1 and w2 must have shape (width,)")
        if not all(
            np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2, [self.b2])
        ):
            raise ValueError("network parameters must be finite")

    @property
    def width(self):
        return self.w1.shape[0]

    @property
    def n_params(self):
        return self.width * 4 + 1

    @classmethod
    def initialize(cls, width=256, seed=0):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init per layer."""
        rng = np.random.default_rng(seed)
        lim1 = 1.0 / np.sqrt(2.0)
        lim2 = 1.0 / np.sqrt(width)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(width, 2)),
            b1=rng.uniform(-lim1, lim1, size=width),
            w2=rng.uniform(-lim2, lim2, size=width),
            b2=rng.uniform(-lim2, lim2),
        )

    @classmethod
    def from_flat(cls, theta, width):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (width * 4 + 1,):
            raise ValueError(f"expected {width * 4 + 1} parameters, got {theta.shape}")
        n1 = width * 2
        return cls(
            w1=theta[:n1].reshape(width, 2),
            b1=theta[n1 : n1 + width],
            w2=theta[n1 + width : n1 + 2 * width],
            b2=theta[-1],
        )

    def to_flat(self):
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2, np.array([self.b2])]
        )

    def _hidden(self, q):
        a = np.tanh(self.w1 @ q + self.b1)
        return a, 1.0 - a * a

    def value(self, q):
        a, _ = self._hidden(q)
        return float(self.w2 @ a + self.b2)

    def input_gradient(self, q):
        """dV/dq, the generalized force the potential applies."""
        _, s = self._hidden(q)
        return self.w1.T @ (self.w2 * s)

    def input_hessian(self, q):
        """d^2V/dq^2, symmetric by construction."""
        a, s = self._hidden(q)
        coef = -2.0 * self.w2 * a * s
        c1, c2 = self.w1[:, 0], self.w1[:, 1]
        h00 = float(coef @ (c1 * c1))
        h01 = float(coef @ (c1 * c2))
        h11 = float(coef @ (c2 * c2))
        return np.array([[h00, h01], [h01, h11]])

    def parameter_jacobian_products(self, q, cot_value, cot_grad):
        """Flat-parameter gradient of cot_value*V(q) + cot_grad . dV/dq(q).

        This is the reverse-mode contraction needed when a loss touches both
        the potential value and the force it applies.
        """
        q = np.asarray(q, dtype=float)
        cot_grad = np.asarray(cot_grad, dtype=float)
        if cot_grad.shape != (2,):
            raise ValueError("cot_grad must have shape (2,)")
        a, s = self._hidden(q)
        ws = self.w2 * s
        t = -2.0 * self.w2 * a * s  # d(w2*s)/dz
        e = self.w1 @ cot_grad
        d_w1 = np.outer(ws, cot_grad) + np.outer(t * e, q) + cot_value * np.outer(ws, q)
        d_b1 = t * e + cot_value * ws
        d_w2 = s * e + cot_value * a
        d_b2 = cot_value
        return np.concatenate([d_w1.ravel(), d_b1, d_w2, np.array([d_b2])])

    def batch_gradient_products(self, qs, cot_grads, hidden=None):
        """Sum of parameter_jacobian_products(q, 0, cg) over rows of (qs,
        cot_grads), evaluated in one vectorized pass.  Backprop through a
        rollout touches hundreds of points, so the batched form matters.
        ``hidden`` may carry precomputed (tanh, 1-tanh^2) rows to skip the
        forward pass.
        """
        qs = np.asarray(qs, dtype=float)
        cot_grads = np.asarray(cot_grads, dtype=float)
        if hidden is None:
            a = np.tanh(qs @ self.w1.T + self.b1)
            s = 1.0 - a * a
        else:
            a, s = hidden
        ws = s * self.w2
        t = -2.0 * a * ws
        e = cot_grads @ self.w1.T
        te = t * e
        d_w1 = ws.T @ cot_grads + te.T @ qs
        d_b1 = te.sum(axis=0)
        d_w2 = (s * e).sum(axis=0)
        return np.concatenate([d_w1.ravel(), d_b1, d_w2, np.array([0.0])])
