"""Composite objectives ``F(x) = f(x) + psi(x)``.

Smooth parts expose ``value``, ``gradient``, ``lipschitz_estimate`` and
``convexity_modulus``; regularizers expose ``value``, ``prox`` and
``strong_convexity``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "prox_l1",
    "L1Norm",
    "NonnegativeIndicator",
    "ZeroRegularizer",
    "LogisticLoss",
    "SquaredHingeDual",
    "QuadraticFunction",
    "CompositeProblem",
    "make_l1_logreg",
    "make_squared_hinge_dual",
    "make_indefinite_quadratic_l1",
    "random_indefinite_quadratic",
    "power_iteration_lmax",
]

POWER_ITERS = 50
POWER_INFLATE = 1.01


def prox_l1(v, t):
    """Soft-thresholding: the prox of ``t * ||.||_1`` at ``v``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def power_iteration_lmax(matvec, dim, n_iter=POWER_ITERS, seed=0):
    """Inflated largest-eigenvalue estimate of a PSD operator."""
    if dim == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = matvec(v)
        lam = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    return POWER_INFLATE * max(lam, float(v @ matvec(v)))


# ---------------------------------------------------------------- regularizers


class ZeroRegularizer:
    closed_form_prox = True

    def value(self, x):
        return 0.0

    def prox(self, v, t):
        return np.array(v, dtype=float, copy=True)

    def strong_convexity(self):
        return 0.0


class L1Norm:
    """``weight * ||x||_1``, optionally restricted to the box ``|x_i| <= box``."""

    closed_form_prox = True

    def __init__(self, weight=1.0, box=None):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        if box is not None and box <= 0:
            raise ValueError("box radius must be positive")
        self.weight = float(weight)
        self.box = None if box is None else float(box)

    def value(self, x):
        if self.box is not None and np.max(np.abs(x), initial=0.0) > self.box * (1 + 1e-12):
            return np.inf
        return self.weight * float(np.abs(x).sum())

    def prox(self, v, t):
        u = prox_l1(v, t * self.weight)
        if self.box is not None:
            np.clip(u, -self.box, self.box, out=u)
        return u

    def strong_convexity(self):
        return 0.0


class NonnegativeIndicator:
    """Indicator of the nonnegative orthant."""

    closed_form_prox = True

    def value(self, x):
        return 0.0 if np.all(x >= 0) else np.inf

    def prox(self, v, t):
        return np.maximum(v, 0.0)

    def strong_convexity(self):
        return 0.0

    def lower_limit(self, x):
        # d >= -x keeps x + d feasible
        return -x


# -------------------------------------------------------------- smooth parts


def _log1pexp(z):
    # log(1 + exp(z)) without overflow
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticLoss:
    """``C * sum_i log(1 + exp(-b_i a_i^T x))``."""

    def __init__(self, X, y, C):
        self.X = sp.csr_matrix(X)
        self.y = np.asarray(y, dtype=float)
        self.C = float(C)
        self.dim = self.X.shape[1]
        self._L = None

    def value(self, x):
        return self.C * float(_log1pexp(-self.y * (self.X @ x)).sum())

    def gradient(self, x):
        z = self.y * (self.X @ x)
        # d/dz log(1+exp(-z)) = -sigmoid(-z)
        return self.C * (self.X.T @ (-self.y * _sigmoid(-z)))

    def value_and_gradient(self, x):
        z = self.y * (self.X @ x)
        val = self.C * float(_log1pexp(-z).sum())
        return val, self.C * (self.X.T @ (-self.y * _sigmoid(-z)))

    def hessian_apply(self, x, v):
        z = self.y * (self.X @ x)
        s = _sigmoid(z)
        return self.C * (self.X.T @ (s * (1 - s) * (self.X @ v)))

    def lipschitz_estimate(self):
        if self._L is None:
            X = self.X
            lmax = power_iteration_lmax(lambda v: X.T @ (X @ v), self.dim)
            self._L = max(0.25 * self.C * lmax, np.finfo(float).tiny)
        return self._L

    def convexity_modulus(self):
        return 0.0


class QuadraticFunction:
    """``0.5 x^T B x + c^T x`` with ``B`` given as a matrix-vector product."""

    def __init__(self, matvec, c, lipschitz, modulus=0.0, dense=None):
        self._matvec = matvec
        self.c = np.asarray(c, dtype=float)
        self.dim = self.c.shape[0]
        self._L = float(lipschitz)
        self._mu = float(modulus)
        self.dense = dense

    def value(self, x):
        return float(0.5 * x @ self._matvec(x) + self.c @ x)

    def gradient(self, x):
        return self._matvec(x) + self.c

    def value_and_gradient(self, x):
        Bx = self._matvec(x)
        return float(0.5 * x @ Bx + self.c @ x), Bx + self.c

    def hessian_apply(self, x, v):
        return self._matvec(v)

    def lipschitz_estimate(self):
        return self._L

    def convexity_modulus(self):
        return self._mu


class SquaredHingeDual(QuadraticFunction):
    """``0.5 a^T K a - 1^T a + ||a||^2 / (4C)`` with ``K = A^T A``.

    Columns of ``A`` are ``b_i x_i``; the variable has one entry per example.
    """

    def __init__(self, X, y, C):
        self.C = float(C)
        self.Z = sp.csr_matrix(sp.diags(np.asarray(y, dtype=float)) @ sp.csr_matrix(X))
        Z = self.Z
        diag_shift = 1.0 / (2.0 * self.C)

        def matvec(a):
            return Z @ (Z.T @ a) + diag_shift * a

        n = Z.shape[0]
        lmax = power_iteration_lmax(lambda v: Z @ (Z.T @ v), n)
        super().__init__(matvec, -np.ones(n), lmax + diag_shift, modulus=diag_shift)

    def gram_block(self, idx):
        """Dense ``K[idx, idx] + I / (2C)``."""
        rows = self.Z[np.asarray(idx)]
        blk = (rows @ rows.T).toarray()
        blk[np.diag_indices_from(blk)] += 1.0 / (2.0 * self.C)
        return blk

    def primal_weights(self, alpha):
        return np.asarray(self.Z.T @ alpha).ravel()


# ---------------------------------------------------------------- composite


@dataclass(frozen=True)
class CompositeProblem:
    smooth: object
    reg: object
    dimension: int
    name: str = ""

    def __post_init__(self):
        if getattr(self.smooth, "dim", self.dimension) != self.dimension:
            raise ValueError("smooth part and problem dimension disagree")

    def value(self, x):
        return self.smooth.value(x) + self.reg.value(x)

    def gradient(self, x):
        return self.smooth.gradient(x)

    def lipschitz(self):
        return self.smooth.lipschitz_estimate()

    def modulus(self):
        return self.smooth.convexity_modulus()


def make_l1_logreg(ds, C=1.0):
    if C <= 0:
        raise ValueError("C must be positive")
    if ds.n_samples == 0:
        raise ValueError("empty dataset")
    smooth = LogisticLoss(ds.features, ds.labels, C)
    return CompositeProblem(smooth, L1Norm(1.0), ds.n_features, "l1lr")


def make_squared_hinge_dual(ds, C=1.0):
    if C <= 0:
        raise ValueError("C must be positive")
    smooth = SquaredHingeDual(ds.features, ds.labels, C)
    return CompositeProblem(smooth, NonnegativeIndicator(), ds.n_samples, "shdual")


def make_indefinite_quadratic_l1(B, c, w, box=None):
    """``0.5 x^T B x + c^T x + w ||x||_1`` with symmetric, possibly indefinite ``B``.

    With indefinite ``B`` the objective is unbounded below unless ``box`` is
    given, which adds the constraint ``|x_i| <= box`` to the regularizer.
    """
    B = np.array(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    if not np.allclose(B, B.T, rtol=0, atol=1e-12 * max(1.0, np.abs(B).max(initial=0))):
        raise ValueError("B must be symmetric")
    if w < 0:
        raise ValueError("w must be nonnegative")
    B = 0.5 * (B + B.T)
    n = B.shape[0]
    L = POWER_INFLATE * float(np.linalg.norm(B, 2)) if n else 0.0
    smooth = QuadraticFunction(lambda v: B @ v, c, max(L, np.finfo(float).tiny), 0.0, dense=B)
    return CompositeProblem(smooth, L1Norm(w, box=box), n, "ncqp")


def random_indefinite_quadratic(dim, seed=0, neg_fraction=0.3, w=0.1, box=1.0):
    """Seeded nonconvex instance: eigenvalues spread over ``[-1, 2]``."""
    rng = np.random.default_rng(seed)
    Qm, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    n_neg = max(1, int(round(neg_fraction * dim)))
    eig = np.concatenate([-rng.uniform(0.1, 1.0, n_neg), rng.uniform(0.1, 2.0, dim - n_neg)])
    B = (Qm * eig) @ Qm.T
    B = 0.5 * (B + B.T)
    c = rng.standard_normal(dim)
    return make_indefinite_quadratic_l1(B, c, w, box=box)
