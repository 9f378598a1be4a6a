"""Outer loops: backtracking on the step size, or modifying the quadratic term."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .diagnostics import prox_grad_stationarity
from .models import IdentityModel
from .subsolvers import NoDescentError, Subproblem, inner_seed, reference_qstar

__all__ = [
    "OuterConfig",
    "IterRecord",
    "OuterTrace",
    "LineSearchError",
    "ConfigurationError",
    "delta",
    "solve_linesearch",
    "solve_modify_h",
    "solve_exact_linesearch_quadratic",
    "solve",
    "TRACE_HEADER",
]

log = logging.getLogger(__name__)

TRACE_HEADER = [
    "k", "F", "delta", "Q_d", "alpha", "mods", "inner_iters",
    "eta", "normG", "sigmaH", "MH", "time_s",
]
ALGORITHMS = ("ls", "mod1", "mod2", "exact-ls")


class LineSearchError(RuntimeError):
    """Backtracking or H-modification did not terminate within the cap."""


class ConfigurationError(ValueError):
    pass


@dataclass
class OuterConfig:
    beta: float = 0.5
    gamma: float = 1e-4
    max_outer: int = 100
    stop_tol: float = 1e-8
    fstar: Optional[float] = None
    rel_tol: Optional[float] = None
    algorithm: str = "ls"
    max_backtracks: int = 60
    measure_eta: bool = False
    timing: bool = False

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        upper_ok = self.beta < 1 and (self.gamma < 1 or self.algorithm in ("mod1", "mod2"))
        if not (0 < self.beta and 0 < self.gamma <= 1 and upper_ok):
            raise ConfigurationError("need beta in (0,1) and gamma in (0,1) ((0,1] for mod1/mod2)")
        if self.max_outer < 0 or self.max_backtracks < 1:
            raise ConfigurationError("max_outer >= 0 and max_backtracks >= 1 required")
        if self.rel_tol is not None and self.fstar is None:
            raise ConfigurationError("rel_tol requires fstar")
        return self


@dataclass
class IterRecord:
    k: int
    F: float
    delta: float
    Q_d: float
    alpha: float
    mods: int
    inner_iters: int
    eta: Optional[float]
    normG: float
    sigmaH: float
    MH: float
    time_s: Optional[float] = None
    # not part of the CSV
    fallback: bool = False
    qstar: Optional[float] = None
    dHd: float = float("nan")
    m0: float = float("nan")
    M0: float = float("nan")
    eta_trials: list = field(default_factory=list)
    x: Optional[np.ndarray] = field(default=None, repr=False)
    model: object = field(default=None, repr=False)

    def csv_row(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return format(float(v), ".17g")

        return [fmt(getattr(self, name)) for name in TRACE_HEADER]


@dataclass
class OuterTrace:
    records: list
    config: OuterConfig
    x: np.ndarray
    F_final: float
    status: str = "max_outer"
    normG_final: float = float("nan")

    def F_values(self):
        """``F(x^0), ..., F(x^K)`` including the final iterate."""
        return np.array([r.F for r in self.records] + [self.F_final])

    @property
    def n_iter(self):
        return len(self.records)

    def iterations_to(self, rel_err, fstar):
        """First ``k`` with ``(F_k - F*) / |F*| <= rel_err``, else ``None``."""
        F = self.F_values()
        hit = np.nonzero((F - fstar) / abs(fstar) <= rel_err)[0]
        return int(hit[0]) if len(hit) else None

    def to_csv(self, fh=None):
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow(r.csv_row())
        if fh is None:
            return buf.getvalue()
        return None

    def config_dict(self):
        return asdict(self.config)


def delta(sub, d):
    """``grad f(x)^T d + psi(x + d) - psi(x)``."""
    return sub.delta(d)


# --------------------------------------------------------------------- helpers


def _negligible(decrease, F):
    return abs(decrease) <= 64 * np.finfo(float).eps * max(1.0, abs(F))


def _prox_gradient_fallback(problem, x, g):
    L = problem.lipschitz()
    H = IdentityModel(L, problem.dimension)
    sub = Subproblem(x, g, H, problem.reg)
    d = problem.reg.prox(x - g / L, 1.0 / L) - x
    return sub, d, sub.value(d)


class _Runner:
    """Shared bookkeeping for the outer loops."""

    def __init__(self, problem, source, solver, policy, config, x0, seed):
        self.problem = problem
        self.source = source
        self.solver = solver
        self.policy = policy
        self.config = config.validate()
        self.seed = 0 if seed is None else int(seed)
        self.x = np.array(x0, dtype=float, copy=True)
        if self.x.shape != (problem.dimension,):
            raise ConfigurationError(f"x0 must have shape ({problem.dimension},)")
        self.F = problem.value(self.x)
        if not np.isfinite(self.F):
            raise ConfigurationError("x0 is outside the domain of the regularizer")
        self.records = []
        self._t0 = time.perf_counter()

    def inner(self, sub, k):
        """Inner solve; ``None`` result signals the caller to fall back."""
        try:
            res = self.solver(sub, self.policy, seed=inner_seed(self.seed, k), k=k)
        except NoDescentError as exc:
            log.info("outer %d: inner solver found no descent (Q=%g)", k, exc.result.Q_d)
            return None
        return res

    def measure(self, sub, res):
        if res.measured_eta is not None:
            qs = None if res.Q_d >= 0 else res.Q_d / (1 - res.measured_eta)
            return res.measured_eta, qs
        if not self.config.measure_eta or not sub.is_convex():
            return None, None
        qstar = reference_qstar(sub)
        if not qstar < 0:
            return None, qstar
        return max(0.0, 1.0 - res.Q_d / qstar), qstar

    def elapsed(self):
        return time.perf_counter() - self._t0 if self.config.timing else None

    def run(self, step):
        cfg = self.config
        problem = self.problem
        status = "max_outer"
        g = problem.gradient(self.x)
        normG = float("nan")
        for k in range(cfg.max_outer):
            normG = float(np.linalg.norm(prox_grad_stationarity(problem, self.x, g)))
            if normG <= cfg.stop_tol:
                status = "converged"
                break
            if cfg.rel_tol is not None and (self.F - cfg.fstar) / abs(cfg.fstar) <= cfg.rel_tol:
                status = "rel_tol"
                break
            out = step(k, g, normG)
            if out is None:
                status = "stalled"
                break
            rec, x_new, F_new = out
            g_new = problem.gradient(x_new)
            self.source.observe(x_new - self.x, g_new - g)
            rec.time_s = self.elapsed()
            rec.x = self.x
            self.records.append(rec)
            self.x, self.F, g = x_new, F_new, g_new
        else:
            normG = float(np.linalg.norm(prox_grad_stationarity(problem, self.x, g)))
            if normG <= cfg.stop_tol:
                status = "converged"
        return OuterTrace(self.records, cfg, self.x, self.F, status, normG)


# ------------------------------------------------------------------ algorithms


def solve_linesearch(problem, source, solver, policy, config=None, x0=None, seed=0):
    """Inexact subproblem solve followed by Armijo backtracking on the step.

    The step starts at 1 every iteration and shrinks by ``beta`` until
    ``F(x + a d) <= F(x) + a * gamma * Delta``.
    """
    config = OuterConfig(algorithm="ls") if config is None else config
    x0 = np.zeros(problem.dimension) if x0 is None else x0
    R = _Runner(problem, source, solver, policy, config, x0, seed)
    cfg = R.config

    def step(k, g, normG):
        x, F = R.x, R.F
        H = source.model(k, x, g)
        sub = Subproblem(x, g, H, problem.reg)
        res = R.inner(sub, k)
        fallback = res is None
        if fallback:
            sub, d, Q_d = _prox_gradient_fallback(problem, x, g)
            if not Q_d < 0 or _negligible(Q_d, F):
                return None
            inner_iters, eta, qstar = 0, None, None
        else:
            d, Q_d, inner_iters = res.d, res.Q_d, res.inner_iters
            eta, qstar = R.measure(sub, res)
        Delta = sub.delta(d)
        alpha, n_bt = 1.0, 0
        while True:
            F_new = problem.value(x + alpha * d)
            if F_new <= F + alpha * cfg.gamma * Delta:
                break
            n_bt += 1
            if n_bt > cfg.max_backtracks:
                if _negligible(Delta, F):
                    return None
                raise LineSearchError(f"outer {k}: no acceptable step after {n_bt - 1} backtracks")
            alpha *= cfg.beta
        rec = IterRecord(
            k, F, Delta, Q_d, alpha, n_bt, inner_iters, eta, normG,
            sub.model.lower_bound(), sub.model.upper_bound(),
            fallback=fallback, qstar=qstar, dHd=float(d @ sub.model.apply(d)), model=sub.model,
        )
        return rec, x + alpha * d, F_new

    return R.run(step)


def solve_modify_h(problem, source, solver, policy, config=None, variant=None, x0=None, seed=0):
    """Full steps; on failed decrease the quadratic term is enlarged and re-solved.

    Variant 1 scales ``H0`` by ``1/a``; variant 2 adds ``(1/a) I`` to ``H0``.
    Acceptance: ``F(x) - F(x + d) >= -gamma * Q(d)``. ``variant`` defaults
    to the one named by ``config.algorithm``, else 1.
    """
    named = None
    if config is not None and config.algorithm in ("mod1", "mod2"):
        named = int(config.algorithm[-1])
    if variant is None:
        variant = named or 1
    if variant not in (1, 2):
        raise ConfigurationError("variant must be 1 or 2")
    if named is not None and named != variant:
        raise ConfigurationError(f"variant {variant} conflicts with algorithm {config.algorithm!r}")
    config = OuterConfig(algorithm=f"mod{variant}") if config is None else config
    x0 = np.zeros(problem.dimension) if x0 is None else x0
    R = _Runner(problem, source, solver, policy, config, x0, seed)
    cfg = R.config

    def step(k, g, normG):
        x, F = R.x, R.F
        H0 = source.model(k, x, g)
        m0, M0 = H0.lower_bound(), H0.upper_bound()
        if variant == 1 and not m0 > 0:
            raise ConfigurationError("variant 1 needs a positive definite initial model")
        a = 1.0
        H = H0.copy()
        mods, inner_total = 0, 0
        eta_trials = []
        while True:
            sub = Subproblem(x, g, H, problem.reg)
            res = R.inner(sub, k)
            fallback = res is None
            if fallback:
                sub, d, Q_d = _prox_gradient_fallback(problem, x, g)
                if not Q_d < 0 or _negligible(Q_d, F):
                    return None
                eta, qstar = None, None
            else:
                d, Q_d = res.d, res.Q_d
                inner_total += res.inner_iters
                eta, qstar = R.measure(sub, res)
                eta_trials.append(eta)
            F_new = problem.value(x + d)
            if fallback or F - F_new >= -cfg.gamma * Q_d:
                break
            mods += 1
            if mods > cfg.max_backtracks:
                if _negligible(Q_d, F):
                    return None
                raise LineSearchError(f"outer {k}: H modified {mods - 1} times without decrease")
            if variant == 1:
                a *= cfg.beta
                H = H0.copy().scale(1.0 / a)
            else:
                H = H0.copy().shift(1.0 / a)
                a *= cfg.beta
        if fallback and F_new > F and not _negligible(F - F_new, F):
            # the closed-form step with H = L I always decreases F
            raise LineSearchError(f"outer {k}: fallback step increased F")
        rec = IterRecord(
            k, F, sub.delta(d), Q_d, 1.0, mods, inner_total, eta, normG,
            sub.model.lower_bound(), sub.model.upper_bound(),
            fallback=fallback, qstar=qstar, dHd=float(d @ sub.model.apply(d)), model=sub.model,
            m0=m0, M0=M0, eta_trials=eta_trials,
        )
        return rec, x + d, F_new

    return R.run(step)


def solve_exact_linesearch_quadratic(problem, source, solver, policy, config=None, x0=None, seed=0):
    """Step ``a = clip(-g^T d / d^T (hess f) d, 0, 1)`` for quadratic ``f``.

    With the nonnegativity constraint both ``x`` and ``x + d`` are feasible,
    so every point on the segment is too.
    """
    hess = getattr(problem.smooth, "hessian_apply", None)
    if hess is None or not hasattr(problem.reg, "lower_limit"):
        raise ConfigurationError("exact line search needs a quadratic f and the nonnegativity constraint")
    config = OuterConfig(algorithm="exact-ls") if config is None else config
    x0 = np.zeros(problem.dimension) if x0 is None else x0
    R = _Runner(problem, source, solver, policy, config, x0, seed)

    def step(k, g, normG):
        x, F = R.x, R.F
        H = source.model(k, x, g)
        sub = Subproblem(x, g, H, problem.reg)
        res = R.inner(sub, k)
        fallback = res is None
        if fallback:
            sub, d, Q_d = _prox_gradient_fallback(problem, x, g)
            if not Q_d < 0 or _negligible(Q_d, F):
                return None
            inner_iters, eta, qstar = 0, None, None
        else:
            d, Q_d, inner_iters = res.d, res.Q_d, res.inner_iters
            eta, qstar = R.measure(sub, res)
        alpha = exact_step(g, d, hess(x, d))
        x_new = x + alpha * d
        np.maximum(x_new, 0.0, out=x_new)  # clears -0.0 style roundoff only
        F_new = problem.value(x_new)
        rec = IterRecord(
            k, F, sub.delta(d), Q_d, alpha, 0, inner_iters, eta, normG,
            sub.model.lower_bound(), sub.model.upper_bound(),
            fallback=fallback, qstar=qstar, dHd=float(d @ sub.model.apply(d)), model=sub.model,
        )
        return rec, x_new, F_new

    return R.run(step)


def exact_step(g, d, Hd):
    """Minimizer over ``[0, 1]`` of ``t g^T d + 0.5 t^2 d^T Hd``."""
    curv = float(d @ Hd)
    if not curv > 0:
        return 1.0
    return float(min(1.0, max(0.0, -float(g @ d) / curv)))


def solve(problem, source, solver, policy, config, x0=None, seed=0):
    """Dispatch on ``config.algorithm``."""
    alg = config.algorithm
    if alg == "ls":
        return solve_linesearch(problem, source, solver, policy, config, x0, seed)
    if alg in ("mod1", "mod2"):
        return solve_modify_h(problem, source, solver, policy, config, int(alg[-1]), x0, seed)
    if alg == "exact-ls":
        return solve_exact_linesearch_quadratic(problem, source, solver, policy, config, x0, seed)
    raise ConfigurationError(f"unknown algorithm {alg!r}")
