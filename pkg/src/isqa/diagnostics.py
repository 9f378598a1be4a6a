"""Stationarity measure, inexactness measurement and rate certification.

Everything here post-processes finished traces; nothing feeds back into the
solvers except :func:`prox_grad_stationarity`, which the outer loop uses as
its stopping test.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "UnsupportedDiagnostic",
    "prox_grad_stationarity",
    "measure_eta",
    "step_size_lower_bound",
    "m_tilde_1",
    "m_tilde_2",
    "tseng_yun_factor",
    "stationarity_bound_linesearch",
    "stationarity_bound_modify_h",
    "RateReport",
    "certify_rates",
    "SequenceInstance",
    "SequenceVerdict",
    "sequence_lemma_oracle",
    "random_sequence_instance",
    "check_qstar_bound",
]

RATIO_SLACK = 1e-12
QBOUND_SLACK = 1e-10


class UnsupportedDiagnostic(TypeError):
    pass


def prox_grad_stationarity(problem, x, g=None):
    """``G = prox_psi(x - grad f(x)) - x``, the unit-metric prox-gradient step."""
    reg = problem.reg
    if not getattr(reg, "closed_form_prox", False):
        raise UnsupportedDiagnostic(f"{type(reg).__name__} has no closed-form prox")
    if g is None:
        g = problem.gradient(x)
    return reg.prox(x - g, 1.0) - x


def measure_eta(sub, d, qstar_ref):
    """``1 - Q(d) / Q*``; values ``>= 1`` mean ``d`` is no better than 0."""
    if not qstar_ref < 0:
        raise ValueError(f"reference Q* must be negative, got {qstar_ref!r}")
    return 1.0 - sub.value(d) / qstar_ref


# ------------------------------------------------------------------ constants


def step_size_lower_bound(beta, gamma, sigma, L, eta):
    return min(1.0, 2.0 * beta * (1.0 - gamma) * sigma / (L * (1.0 + math.sqrt(eta))))


def _c1(eta, gamma):
    r = math.sqrt(eta)
    return (2.0 - gamma * (1.0 - r)) / (1.0 + r)


def m_tilde_1(eta, L, beta, gamma, m0, M0):
    """Cap on the norm of the final H after scaling modifications."""
    if not m0 > 0:
        raise ValueError("m0 must be positive for the scaling variant")
    return M0 * max(1.0, L / (beta * _c1(eta, gamma) * m0))


def m_tilde_2(eta, L, beta, gamma, m0, M0):
    """Cap on the norm of the final H after identity-shift modifications."""
    return M0 + max(1.0, (L / _c1(eta, gamma) - m0) / beta)


def tseng_yun_factor(sigma, M):
    """``c`` with ``||G|| <= c ||d*||`` when ``sigma I <= H <= M I``."""
    return 0.5 * (1.0 + 1.0 / sigma + math.sqrt(max(0.0, 1.0 - 2.0 / M + 1.0 / sigma**2))) * M


def stationarity_bound_linesearch(F0_minus_Fstar, gamma, k, sigma, M, eta, min_alpha):
    """Bound on ``min_{t<=k} ||G_t||^2`` for the backtracking algorithm."""
    # ||G||^2 <= c^2 ||d*||^2 <= 2 c^2 |Q*| / sigma
    c = tseng_yun_factor(sigma, M)
    return F0_minus_Fstar / (gamma * (k + 1)) * 2.0 * c**2 / ((1.0 - eta) * sigma * min_alpha)


def stationarity_bound_modify_h(F0_minus_Fstar, gamma, k, m0, M_tilde, eta):
    c = tseng_yun_factor(m0, M_tilde)
    return F0_minus_Fstar / (gamma * (k + 1)) * 2.0 * c**2 / ((1.0 - eta) * m0)


# -------------------------------------------------------------------- report


@dataclass
class RateReport:
    algorithm: str
    constants: dict
    ratios: list = field(default_factory=list)
    linear_caps: list = field(default_factory=list)
    early_linear: list = field(default_factory=list)
    early_linear_caps: list = field(default_factory=list)
    min_abs_Q: list = field(default_factory=list)
    min_abs_Q_bound: list = field(default_factory=list)
    min_normG_sq: list = field(default_factory=list)
    min_normG_sq_bound: list = field(default_factory=list)
    sublinear_caps: list = field(default_factory=list)
    k0_estimate: Optional[int] = None
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def violated(self, check):
        return [v for v in self.violations if v["check"] == check]

    def to_dict(self):
        return _jsonable(asdict(self))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flag(report, check, k, lhs, rhs):
    report.violations.append({"check": check, "k": int(k), "lhs": float(lhs), "rhs": float(rhs)})


def certify_rates(
    trace,
    L,
    fstar,
    mu=0.0,
    xstar=None,
    convex=True,
    beta=None,
    gamma=None,
    eta_bar=None,
):
    """Check every applicable rate inequality against a finished trace.

    Parameters
    ----------
    trace : OuterTrace
    L : float
        Lipschitz constant of the smooth part (the same estimate the solver saw).
    fstar : float
        Reference optimal value (for nonconvex runs, the best value known).
    mu : float
        Optimal-set strong convexity modulus; 0 disables the linear-rate caps.
    xstar : array, optional
        Reference solution, used as the projection onto the solution set for
        the early-linear-phase condition and the R0 estimate.
    convex : bool
        Whether f is convex; controls the objective-error checks.
    eta_bar : float, optional
        Fallback inexactness when iterations carry no measured eta.

    Returns
    -------
    RateReport
        Violations are collected, never raised.
    """
    if fstar is None:
        raise ValueError("certify_rates needs a reference optimal value")
    cfg = trace.config
    beta = cfg.beta if beta is None else beta
    gamma = cfg.gamma if gamma is None else gamma
    alg = cfg.algorithm
    modify_h = alg in ("mod1", "mod2")
    recs = [r for r in trace.records if not r.fallback]
    F = trace.F_values()
    etas = [r.eta for r in recs if r.eta is not None]
    for r in recs:
        etas.extend(e for e in r.eta_trials if e is not None)
    if etas:
        eta_bar = max(etas)
    if eta_bar is None:
        raise ValueError("no measured eta in the trace and no eta_bar given")
    sigma = min((r.sigmaH for r in recs), default=float("nan"))
    M = max((r.MH for r in recs), default=float("nan"))
    R0 = None
    if xstar is not None and trace.records and trace.records[0].x is not None:
        R0 = max(float(np.linalg.norm(r.x - xstar)) for r in trace.records)
    rep = RateReport(
        alg,
        {
            "L": L, "mu": mu, "fstar": fstar, "beta": beta, "gamma": gamma,
            "sigma": sigma, "M": M, "eta_bar": eta_bar, "R0": R0,
            "n_iter": trace.n_iter, "n_fallback": trace.n_iter - len(recs),
        },
    )
    checks = {}

    def count(name):
        checks[name] = checks.get(name, 0) + 1

    # per-iteration contraction
    for r in trace.records:
        k = r.k
        gap, gap_next = F[k] - fstar, F[k + 1] - fstar
        ratio = gap_next / gap if gap > 0 else float("nan")
        rep.ratios.append(ratio)
        eta = r.eta if r.eta is not None else eta_bar
        if convex and mu > 0 and not r.fallback and gap > 0:
            if modify_h:
                cap = 1.0 - gamma * mu * (1.0 - eta) / (mu + r.MH)
            else:
                cap = 1.0 - r.alpha * gamma * (1.0 - eta) * mu / (mu + r.MH)
            rep.linear_caps.append(cap)
            count("linear_rate")
            if ratio > cap + RATIO_SLACK:
                _flag(rep, "linear_rate", k, ratio, cap)
        else:
            rep.linear_caps.append(None)
        early = None
        if convex and xstar is not None and r.x is not None and r.model is not None and gap > 0:
            e = r.x - xstar
            early = bool(gap >= float(e @ r.model.apply(e)))
            if early and not r.fallback:
                a = 1.0 if modify_h else r.alpha
                cap = 1.0 - (1.0 - eta) * gamma * a / 2.0
                rep.early_linear_caps.append(cap)
                count("early_linear")
                if ratio > cap + RATIO_SLACK:
                    _flag(rep, "early_linear", k, ratio, cap)
        rep.early_linear.append(early)

    # min |Q_t| decay and stationarity decay
    F0_gap = F[0] - fstar
    best_Q = math.inf
    best_G = math.inf
    min_alpha = math.inf
    for r in trace.records:
        if r.fallback:
            rep.min_abs_Q.append(None)
            rep.min_abs_Q_bound.append(None)
            rep.min_normG_sq.append(None)
            rep.min_normG_sq_bound.append(None)
            continue
        k = r.k
        best_Q = min(best_Q, abs(r.Q_d))
        best_G = min(best_G, r.normG**2)
        min_alpha = min(min_alpha, 1.0 if modify_h else r.alpha)
        qb = F0_gap / (gamma * (k + 1) * min_alpha)
        rep.min_abs_Q.append(best_Q)
        rep.min_abs_Q_bound.append(qb)
        count("min_abs_Q")
        if best_Q > qb + QBOUND_SLACK:
            _flag(rep, "min_abs_Q", k, best_Q, qb)
        gb = None
        if modify_h:
            m0 = min(r2.m0 for r2 in recs)
            if m0 > 0:
                fn = m_tilde_1 if alg == "mod1" else m_tilde_2
                Mt = max(fn(eta_bar, L, beta, gamma, r2.m0, r2.M0) for r2 in recs)
                gb = stationarity_bound_modify_h(F0_gap, gamma, k, m0, Mt, eta_bar)
        elif sigma > 0:
            gb = stationarity_bound_linesearch(F0_gap, gamma, k, sigma, M, eta_bar, min_alpha)
        rep.min_normG_sq.append(best_G)
        rep.min_normG_sq_bound.append(gb)
        if gb is not None:
            count("stationarity")
            if best_G > gb * (1 + 1e-12) + QBOUND_SLACK:
                _flag(rep, "stationarity", k, best_G, gb)

    # sublinear objective decay, with the R0 estimate
    if convex and R0 is not None and recs:
        A = M * R0**2
        gaps = F - fstar
        k0 = next((k for k in range(len(gaps)) if gaps[k] < A), None)
        rep.k0_estimate = k0
        if k0 is not None:
            acc = 0.0
            for k in range(k0, len(gaps)):
                if k > k0:
                    prev = trace.records[k - 1]
                    acc += 1.0 if modify_h else prev.alpha
                cap = 2.0 * A / (gamma * (1.0 - eta_bar) * acc + 2.0)
                rep.sublinear_caps.append(cap)
                count("sublinear")
                if gaps[k] > cap * (1 + 1e-12) + QBOUND_SLACK:
                    _flag(rep, "sublinear", k, gaps[k], cap)
    rep.checks = checks
    return rep


# ------------------------------------------------------- sequence recurrence


@dataclass
class SequenceInstance:
    delta0: float
    c: np.ndarray
    A_seq: np.ndarray
    A: float

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A_seq = np.asarray(self.A_seq, dtype=float)
        if self.delta0 < 0 or np.any(self.c < 0) or np.any(self.c > 2):
            raise ValueError("need delta0 >= 0 and c_k in [0, 2]")
        if np.any(self.A_seq <= 0) or np.any(self.A_seq > self.A):
            raise ValueError("need 0 < A_k <= A")


@dataclass
class SequenceVerdict:
    ok: bool
    deltas: np.ndarray
    k0: Optional[int]
    violations: list


def sequence_lemma_oracle(inst, n_steps=None, rtol=1e-12):
    """Run the worst sequence the recurrence allows and test both conclusions.

    ``delta_{k+1}`` is set to ``min over lam in [0,1]`` of
    ``delta_k + c_k (-lam delta_k + A_k lam^2 / 2)``, the largest value the
    hypothesis permits, attained at ``lam = min(1, delta_k / A_k)``.
    """
    n = len(inst.c) if n_steps is None else int(n_steps)
    if n > len(inst.c) or n > len(inst.A_seq):
        raise ValueError("instance shorter than n_steps")
    deltas = np.empty(n + 1)
    deltas[0] = inst.delta0
    viol = []
    for k in range(n):
        dk, ck, Ak = deltas[k], inst.c[k], inst.A_seq[k]
        lam = min(1.0, dk / Ak)
        deltas[k + 1] = dk + ck * (-lam * dk + 0.5 * Ak * lam * lam)
        if dk >= Ak:
            rhs = (1.0 - ck / 2.0) * dk
            if deltas[k + 1] > rhs + rtol * max(dk, 1.0):
                viol.append(("linear", k, deltas[k + 1], rhs))
    below = np.nonzero(deltas < inst.A)[0]
    k0 = int(below[0]) if len(below) else None
    if k0 is not None:
        acc = 0.0
        for k in range(k0, n + 1):
            if k > k0:
                acc += inst.c[k - 1]
            rhs = 2.0 * inst.A / (acc + 2.0)
            if deltas[k] > rhs * (1 + rtol):
                viol.append(("sub", k, deltas[k], rhs))
    return SequenceVerdict(not viol, deltas, k0, viol)


def random_sequence_instance(rng, n_steps=200, A=1.0):
    """``delta0`` in ``[0, 10A]``, ``c_k`` in ``[0, 1]``, ``A_k`` in ``(0, A]``."""
    delta0 = rng.uniform(0.0, 10.0 * A)
    c = rng.uniform(0.0, 1.0, n_steps)
    A_seq = A * (1.0 - rng.uniform(0.0, 1.0, n_steps))  # (0, A]
    A_seq = np.maximum(A_seq, 1e-12 * A)
    return SequenceInstance(delta0, c, A_seq, A)


# ----------------------------------------------------------- Q* upper bound


def check_qstar_bound(trace, mu, fstar, slack=QBOUND_SLACK):
    """``Q*_k <= mu / (mu + ||H_k||) * (F* - F(x^k))`` at every recorded iterate.

    ``MH`` (a certified upper bound on ``||H_k||`` for PSD models) stands in
    for the norm. Returns a list of violations; raises if references are missing.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    viol = []
    n_checked = 0
    for r in trace.records:
        if r.fallback:
            continue
        if r.qstar is None:
            raise ValueError(f"iteration {r.k} carries no reference Q*")
        rhs = mu / (mu + r.MH) * (fstar - r.F)
        n_checked += 1
        if r.qstar > rhs + slack:
            viol.append({"check": "qstar_bound", "k": r.k, "lhs": r.qstar, "rhs": rhs})
    return viol
