"""Inexact solvers for the quadratic-plus-regularizer subproblem.

The subproblem at base point ``x`` is

    Q(d) = g^T d + 0.5 d^T H d + psi(x + d) - psi(x),    Q(0) = 0,

and a solver only has to return some ``d`` with ``Q(d) < 0``; how close it
gets to the minimum is governed by an inner policy.
"""

from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.optimize import lsq_linear

__all__ = [
    "Subproblem",
    "Fixed",
    "Increasing",
    "GapCheck",
    "InnerResult",
    "NoDescentError",
    "sparsa_solve",
    "rpcd_solve",
    "reference_qstar",
    "inner_seed",
    "get_solver",
]

REFERENCE_ITERS = 20000
BB_CLAMP = 1e3
NONMONOTONE_MEMORY = 10
ACCEPT_CONST = 1e-4
MAX_INNER_BACKTRACKS = 60


class NoDescentError(RuntimeError):
    """The inner solver found no ``d`` with ``Q(d) < 0``."""

    def __init__(self, result):
        super().__init__(f"no descent: best Q = {result.Q_d!r}")
        self.result = result


class Subproblem:
    """Frozen subproblem instance at base point ``x``."""

    def __init__(self, x, grad, model, reg):
        self.x = np.asarray(x, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.model = model
        self.reg = reg
        self.psi_x = float(reg.value(self.x))

    @property
    def dim(self):
        return self.x.shape[0]

    def value(self, d, Hd=None):
        if Hd is None:
            Hd = self.model.apply(d)
        return float(self.grad @ d + 0.5 * (d @ Hd) + self.reg.value(self.x + d) - self.psi_x)

    def delta(self, d):
        """Linearized decrease ``g^T d + psi(x + d) - psi(x)``."""
        return float(self.grad @ d + self.reg.value(self.x + d) - self.psi_x)

    def is_convex(self):
        return self.model.lower_bound() + self.reg.strong_convexity() >= 0


# ------------------------------------------------------------------- policies


@dataclass(frozen=True)
class Fixed:
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")

    def budget(self, k):
        return self.T


@dataclass(frozen=True)
class Increasing:
    """``1 + floor(k / every)`` inner iterations at outer iteration ``k``."""

    every: int = 10

    def budget(self, k):
        return 1 + k // self.every


@dataclass(frozen=True)
class GapCheck:
    """Iterate until ``Q(d) <= (1 - eta) Q*_ref``; the reference is computed."""

    eta: float
    max_iter: int = REFERENCE_ITERS
    reference: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.eta < 1:
            raise ValueError("eta must lie in [0, 1)")

    def budget(self, k):
        return self.max_iter


@dataclass
class InnerResult:
    d: np.ndarray
    inner_iters: int
    Q_d: float
    measured_eta: Optional[float] = None
    skipped: int = 0
    history: list = field(default_factory=list, repr=False)


def inner_seed(seed, k):
    """Per-outer-iteration seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def _gap_target(sub, policy, solver_name):
    if not isinstance(policy, GapCheck):
        return None, None
    ref = policy.reference
    qstar = ref(sub) if ref is not None else reference_qstar(sub, solver=solver_name)
    if qstar >= 0:
        return 0.0, qstar
    return (1.0 - policy.eta) * qstar, qstar


def _eta(Q_d, qstar):
    if qstar is None or not qstar < 0:
        return None
    return 1.0 - Q_d / qstar


# -------------------------------------------------------------------- SpaRSA


def _sparsa(sub, max_iter, target=None, tol=None, record=False):
    model, reg, x, g = sub.model, sub.reg, sub.x, sub.grad
    sigma, M = model.lower_bound(), model.upper_bound()
    curv = max(abs(sigma), abs(M), np.finfo(float).tiny)
    a_min = max(sigma, 1e-8 * curv) / BB_CLAMP
    a_max = BB_CLAMP * curv

    d = np.zeros_like(x)
    Hd = np.zeros_like(x)
    Qd = 0.0
    best_Q, best_d = 0.0, d
    gg = float(g @ g)
    if gg > 0:
        alpha = float(g @ model.apply(g)) / gg
    else:
        alpha = M
    alpha = min(max(alpha, a_min), a_max)
    hist = deque([0.0], maxlen=NONMONOTONE_MEMORY)
    history = [0.0] if record else []
    small = 0
    iters = 0
    while iters < max_iter:
        grad_q = g + Hd
        for _ in range(MAX_INNER_BACKTRACKS):
            dn = reg.prox(x + d - grad_q / alpha, 1.0 / alpha) - x
            step = dn - d
            Hdn = model.apply(dn)
            Qn = float(g @ dn + 0.5 * (dn @ Hdn) + reg.value(x + dn) - sub.psi_x)
            if Qn <= max(hist) - 0.5 * ACCEPT_CONST * alpha * float(step @ step):
                break
            alpha *= 2.0
        else:
            break
        ss = float(step @ step)
        if ss == 0.0:
            break
        y = Hdn - Hd
        alpha = min(max(float(step @ y) / ss, a_min), a_max)
        decrease = Qd - Qn
        d, Hd, Qd = dn, Hdn, Qn
        hist.append(Qd)
        iters += 1
        if record:
            history.append(Qd)
        if Qd < best_Q:
            best_Q, best_d = Qd, d
        if target is not None and best_Q <= target:
            break
        if tol is not None:
            small = small + 1 if decrease <= tol * max(abs(Qd), 1e-300) else 0
            if small >= NONMONOTONE_MEMORY:
                break
    return InnerResult(best_d.copy(), iters, best_Q, history=history)


def sparsa_solve(sub, policy, seed=None, k=0, record=False):
    """Proximal gradient with Barzilai-Borwein steps and nonmonotone acceptance.

    Starts from ``d = 0`` and returns the best iterate by ``Q``. Raises
    :class:`NoDescentError` if no iterate reached ``Q < 0``.
    """
    target, qstar = _gap_target(sub, policy, "sparsa")
    res = _sparsa(sub, policy.budget(k), target=target, record=record)
    res.measured_eta = _eta(res.Q_d, qstar)
    if not res.Q_d < 0:
        raise NoDescentError(res)
    return res


# ---------------------------------------------------------------------- RPCD


class _Block:
    __slots__ = ("sl", "H", "cols", "diag", "lower", "d", "r", "rng", "skipped")

    def __init__(self, rng_range, H, x, g, seed):
        self.sl = slice(rng_range.start, rng_range.stop)
        self.H = H
        self.cols = [np.ascontiguousarray(H[:, i]) for i in range(H.shape[0])]
        self.diag = np.diag(H).copy()
        self.lower = -x[self.sl]
        self.d = np.zeros(H.shape[0])
        self.r = g[self.sl].copy()  # gradient of the quadratic part at d
        self.rng = np.random.default_rng(seed)
        self.skipped = set()

    def sweep(self, _=None):
        d, r, diag, lower, cols = self.d, self.r, self.diag, self.lower, self.cols
        for i in self.rng.permutation(d.shape[0]):
            hii = diag[i]
            if not hii > 0:
                self.skipped.add(int(i))
                continue
            new = d[i] - r[i] / hii
            if new < lower[i]:
                new = lower[i]
            step = new - d[i]
            if step != 0.0:
                d[i] = new
                r += step * cols[i]
        return self

    def q(self, g):
        # g^T d + 0.5 d^T H d = 0.5 d^T (g + r)
        return 0.5 * float(self.d @ (g[self.sl] + self.r))


def _threads():
    try:
        return max(1, int(os.environ.get("ISQA_THREADS", "1")))
    except ValueError:
        return 1


def _rpcd(sub, seed, max_sweeps, target=None, tol=None, record=False):
    lower_limit = getattr(sub.reg, "lower_limit", None)
    if lower_limit is None:
        raise TypeError("rpcd requires the nonnegative-orthant regularizer")
    x, g = sub.x, sub.grad
    seed = 0 if seed is None else int(seed)
    blocks = [
        _Block(r, H, x, g, seed + b) for b, (r, H) in enumerate(sub.model.blocks())
    ]
    n_threads = min(_threads(), len(blocks))
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    history = [0.0] if record else []
    Q = 0.0
    sweeps = 0
    small = 0
    try:
        while sweeps < max_sweeps:
            if pool is not None:
                list(pool.map(_Block.sweep, blocks))
            else:
                for blk in blocks:
                    blk.sweep()
            sweeps += 1
            Qn = sum(blk.q(g) for blk in blocks)
            decrease = Q - Qn
            Q = Qn
            if record:
                history.append(Q)
            if target is not None and Q <= target:
                break
            if tol is not None:
                small = small + 1 if decrease <= tol * max(abs(Q), 1e-300) else 0
                if small >= 3:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    d = np.concatenate([blk.d for blk in blocks]) if blocks else np.zeros(0)
    # the indicator term is zero: every coordinate respects d_i >= -x_i
    skipped = sum(len(blk.skipped) for blk in blocks)
    return InnerResult(d, sweeps, float(Q), skipped=skipped, history=history)


def rpcd_solve(sub, policy, seed=None, k=0, record=False):
    """Cyclic coordinate descent over a fresh random permutation each sweep.

    Only for the nonnegativity constraint. The model is split into its
    diagonal blocks, which are independent subproblems; block ``b`` uses
    seed ``seed + b``. One sweep over all blocks counts as one inner iteration.
    """
    target, qstar = _gap_target(sub, policy, "rpcd")
    res = _rpcd(sub, seed, policy.budget(k), target=target, record=record)
    res.measured_eta = _eta(res.Q_d, qstar)
    if not res.Q_d < 0:
        raise NoDescentError(res)
    return res


# ----------------------------------------------------------------- reference


def _bounded_qp(sub):
    """Exact ``min Q`` under ``d >= -x`` for a positive definite block model.

    Each block is rewritten as bounded least squares through its Cholesky
    factor and handed to the BVLS active-set solver.
    """
    x, g = sub.x, sub.grad
    total = 0.0
    for r, Hb in sub.model.blocks():
        sl = slice(r.start, r.stop)
        c, lower = cho_factor(Hb, lower=True)
        Lc = np.tril(c) if lower else np.triu(c).T
        b = -solve_triangular(Lc, g[sl], lower=True)
        res = lsq_linear(Lc.T, b, bounds=(-x[sl], np.inf), method="bvls", tol=1e-14)
        d = np.maximum(res.x, -x[sl])
        total += float(g[sl] @ d + 0.5 * d @ (Hb @ d))
    return total


def reference_qstar(sub, solver=None, max_iter=REFERENCE_ITERS, tol=1e-15, seed=0):
    """High-accuracy estimate of ``inf_d Q(d)`` for measuring inexactness.

    Runs the matching solver for up to ``max_iter`` iterations, stopping
    early once the per-iteration decrease stalls below ``tol`` relative.
    """
    if solver is None:
        solver = "rpcd" if hasattr(sub.reg, "lower_limit") else "sparsa"
    if solver == "rpcd" and sub.model.lower_bound() > 0:
        return min(_bounded_qp(sub), 0.0)
    if solver == "rpcd":
        res = _rpcd(sub, seed, max_iter, tol=tol)
    else:
        res = _sparsa(sub, max_iter, tol=tol)
    return min(res.Q_d, 0.0)


def get_solver(name):
    try:
        return {"sparsa": sparsa_solve, "rpcd": rpcd_solve}[name]
    except KeyError:
        raise ValueError(f"unknown inner solver {name!r}") from None
