"""Quadratic terms ``H`` for the subproblem and the sources that supply them.

Every model is ``scale * B + shift * I`` for a fixed core ``B``; ``scale`` and
``shift`` are the two runtime modifications the outer loop may apply. Bounds
are certified: ``lower_bound() <= v^T H v / ||v||^2 <= upper_bound()``.
"""

from __future__ import annotations

import copy
from collections import deque

import numpy as np

__all__ = [
    "QuadraticModel",
    "IdentityModel",
    "DenseModel",
    "BlockDiagonalModel",
    "LbfgsState",
    "LbfgsModel",
    "identity_model",
    "block_diagonal_model",
    "lbfgs_update",
    "lbfgs_apply",
    "FixedModelSource",
    "LbfgsModelSource",
    "SAFEGUARD",
    "GAMMA_CLAMP",
]

SAFEGUARD = 1e-8
GAMMA_CLAMP = (1e-8, 1e8)
LBFGS_SLACK = 1e-2
EIG_SLACK = 1e-12


def _widen(lo, hi, rel):
    return lo - rel * abs(lo), hi + rel * abs(hi)


class QuadraticModel:
    """Base class; subclasses provide the core operator ``B``."""

    def __init__(self, dim):
        self.dim = int(dim)
        self._scale = 1.0
        self._shift = 0.0

    # core operator, implemented by subclasses
    def _core_apply(self, v):
        raise NotImplementedError

    def _core_bounds(self):
        raise NotImplementedError

    def _core_dense(self):
        return np.column_stack([self._core_apply(e) for e in np.eye(self.dim)])

    def apply(self, v):
        out = self._core_apply(v)
        if self._scale != 1.0:
            out = self._scale * out
        if self._shift:
            out = out + self._shift * v
        return out

    def lower_bound(self):
        lo, _ = self._core_bounds()
        return self._scale * lo + self._shift

    def upper_bound(self):
        _, hi = self._core_bounds()
        return self._scale * hi + self._shift

    def scale(self, factor):
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        self._scale *= factor
        self._shift *= factor
        return self

    def shift(self, rho):
        if rho < 0:
            raise ValueError("shift must be nonnegative")
        self._shift += rho
        return self

    def copy(self):
        # cores are immutable after construction; a shallow copy is enough
        return copy.copy(self)

    def to_dense(self):
        return self._scale * self._core_dense() + self._shift * np.eye(self.dim)

    def diagonal(self):
        return np.diag(self.to_dense()).copy()

    def blocks(self):
        """``[(index_range, dense_block), ...]`` covering the dimension."""
        return [(range(self.dim), self.to_dense())]

    def __repr__(self):
        return (
            f"{type(self).__name__}(dim={self.dim}, scale={self._scale:g}, "
            f"shift={self._shift:g})"
        )


class IdentityModel(QuadraticModel):
    def __init__(self, zeta, dim):
        if not zeta > 0:
            raise ValueError("zeta must be positive")
        super().__init__(dim)
        self._scale = float(zeta)

    def _core_apply(self, v):
        return np.array(v, dtype=float, copy=True)

    def _core_bounds(self):
        return 1.0, 1.0

    def _core_dense(self):
        return np.eye(self.dim)

    def diagonal(self):
        return np.full(self.dim, self._scale + self._shift)


def identity_model(zeta, dim):
    return IdentityModel(zeta, dim)


class DenseModel(QuadraticModel):
    """Explicit symmetric matrix (exact Hessians, test fixtures)."""

    def __init__(self, matrix):
        M = np.array(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("matrix must be square")
        super().__init__(M.shape[0])
        self.matrix = 0.5 * (M + M.T)
        eig = np.linalg.eigvalsh(self.matrix) if self.dim else np.zeros(1)
        pad = EIG_SLACK * max(1.0, np.abs(eig).max())
        self._bounds = (eig[0] - pad, eig[-1] + pad)

    def _core_apply(self, v):
        return self.matrix @ v

    def _core_bounds(self):
        return self._bounds

    def _core_dense(self):
        return self.matrix


class BlockDiagonalModel(QuadraticModel):
    """Dense diagonal blocks over a contiguous partition; couplings dropped."""

    def __init__(self, blocks, ranges):
        ranges = [range(r.start, r.stop) for r in ranges]
        if len(blocks) != len(ranges):
            raise ValueError("one block per range required")
        pos = 0
        for r, b in zip(ranges, blocks):
            if r.start != pos or r.stop <= r.start:
                raise ValueError("ranges must partition the dimension contiguously")
            if np.shape(b) != (len(r), len(r)):
                raise ValueError(f"block for {r} has shape {np.shape(b)}")
            pos = r.stop
        super().__init__(pos)
        self.ranges = ranges
        self.block_mats = [0.5 * (np.asarray(b, float) + np.asarray(b, float).T) for b in blocks]
        lo, hi = np.inf, -np.inf
        for b in self.block_mats:
            eig = np.linalg.eigvalsh(b)
            pad = EIG_SLACK * max(1.0, np.abs(eig).max())
            lo = min(lo, eig[0] - pad)
            hi = max(hi, eig[-1] + pad)
        self._bounds = (lo, hi)

    def _core_apply(self, v):
        out = np.empty(self.dim)
        for r, b in zip(self.ranges, self.block_mats):
            out[r.start : r.stop] = b @ v[r.start : r.stop]
        return out

    def _core_bounds(self):
        return self._bounds

    def _core_dense(self):
        out = np.zeros((self.dim, self.dim))
        for r, b in zip(self.ranges, self.block_mats):
            out[r.start : r.stop, r.start : r.stop] = b
        return out

    def blocks(self):
        eye = np.eye
        return [
            (r, self._scale * b + self._shift * eye(len(r)))
            for r, b in zip(self.ranges, self.block_mats)
        ]

    def diagonal(self):
        d = np.concatenate([np.diag(b) for b in self.block_mats])
        return self._scale * d + self._shift


def block_diagonal_model(blocks, ranges):
    """Build from dense blocks, or from a problem exposing ``gram_block``."""
    if callable(getattr(blocks, "gram_block", None)):
        src = blocks
        blocks = [src.gram_block(list(r)) for r in ranges]
    elif callable(getattr(getattr(blocks, "smooth", None), "gram_block", None)):
        src = blocks.smooth
        blocks = [src.gram_block(list(r)) for r in ranges]
    return BlockDiagonalModel(blocks, ranges)


# --------------------------------------------------------------------- L-BFGS


class LbfgsState:
    """Curvature pairs for the limited-memory BFGS approximation of the Hessian."""

    def __init__(self, dim, memory=10):
        if memory < 1:
            raise ValueError("memory must be >= 1")
        self.dim = int(dim)
        self.memory = int(memory)
        self.pairs = deque(maxlen=self.memory)
        self.gamma0 = 1.0
        self.n_rejected = 0

    def update(self, s, y):
        """Store ``(s, y)`` if it passes the curvature safeguard."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        ss = float(s @ s)
        if not ss > 0:
            raise ValueError("s must be nonzero")
        sy = float(s @ y)
        if not sy >= SAFEGUARD * ss:
            self.n_rejected += 1
            return False
        self.pairs.append((s.copy(), y.copy(), sy))
        self.gamma0 = float(np.clip(sy / float(y @ y), *GAMMA_CLAMP))
        return True

    def model(self):
        return LbfgsModel(self)


def lbfgs_update(state, s, y):
    return state.update(s, y)


def lbfgs_apply(state, v):
    return LbfgsModel(state).apply(v)


class LbfgsModel(QuadraticModel):
    """Frozen compact-form snapshot of an :class:`LbfgsState`.

    ``B = delta I - W M^{-1} W^T`` with ``W = [delta S, Y]`` and
    ``M = [[delta S^T S, L], [L^T, -D]]``, ``delta = 1 / gamma0``.
    """

    def __init__(self, state):
        super().__init__(state.dim)
        self.delta = 1.0 / state.gamma0
        self.n_pairs = len(state.pairs)
        if self.n_pairs == 0:
            self._W = None
            self._bounds = (self.delta, self.delta)
            return
        S = np.column_stack([p[0] for p in state.pairs])
        Y = np.column_stack([p[1] for p in state.pairs])
        SY = S.T @ Y
        Lm = np.tril(SY, -1)
        Dm = np.diag(np.diag(SY))
        M = np.block([[self.delta * (S.T @ S), Lm], [Lm.T, -Dm]])
        self._W = np.hstack([self.delta * S, Y])
        self._Minv = np.linalg.inv(M)
        self._bounds = self._certify()

    def _core_apply(self, v):
        out = self.delta * np.asarray(v, dtype=float)
        if self._W is not None:
            out = out - self._W @ (self._Minv @ (self._W.T @ v))
        return out

    def _certify(self):
        # eigenvalues of B restricted to span(W), plus delta on the complement
        U, sv, _ = np.linalg.svd(self._W, full_matrices=False)
        r = int(np.sum(sv > 1e-12 * sv[0]))
        U = U[:, :r]
        WU = self._W.T @ U
        P = self.delta * np.eye(r) - WU.T @ self._Minv @ WU
        eig = np.linalg.eigvalsh(0.5 * (P + P.T))
        lo, hi = eig[0], eig[-1]
        if r < self.dim:
            lo, hi = min(lo, self.delta), max(hi, self.delta)
        return _widen(lo, hi, LBFGS_SLACK)

    def _core_bounds(self):
        return self._bounds


# -------------------------------------------------------------------- sources


class FixedModelSource:
    """Hands out a fresh copy of the same model every outer iteration."""

    def __init__(self, model):
        self.base = model

    def model(self, k, x=None, g=None):
        return self.base.copy()

    def observe(self, s, y):
        pass


class LbfgsModelSource:
    def __init__(self, dim, memory=10):
        self.state = LbfgsState(dim, memory)

    def model(self, k, x=None, g=None):
        return LbfgsModel(self.state)

    def observe(self, s, y):
        if np.any(s):
            self.state.update(s, y)
