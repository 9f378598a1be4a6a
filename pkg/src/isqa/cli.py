"""Command-line driver: ``isqa run`` and ``isqa sweep``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys

import numpy as np

from .dataio import LibsvmParseError, column_blocks, load_libsvm, synthetic_dataset
from .diagnostics import certify_rates
from .models import (
    DenseModel,
    FixedModelSource,
    IdentityModel,
    LbfgsModelSource,
    block_diagonal_model,
)
from .outer import TRACE_HEADER, ConfigurationError, LineSearchError, OuterConfig, solve
from .problems import make_l1_logreg, make_squared_hinge_dual, random_indefinite_quadratic
from .subsolvers import Fixed, GapCheck, Increasing, get_solver

__all__ = ["main", "build_parser", "RunSpec", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA", "EXIT_SOLVER"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4
REFERENCE_FACTOR = 10
REFERENCE_TOL = 1e-14


class DataError(Exception):
    pass


@dataclasses.dataclass
class RunSpec:
    problem: str = "l1lr"
    data: str = None
    synthetic: str = None
    dim: int = 30
    C: float = 1.0
    algorithm: str = "ls"
    model: str = "lbfgs:10"
    inner: str = "sparsa"
    inner_policy: str = "fixed:10"
    beta: float = 0.5
    gamma: float = 1e-4
    max_outer: int = 100
    stop_tol: float = 1e-8
    seed: int = 0
    fstar: float = None
    measure_eta: bool = False
    timing: bool = False
    mode: str = "normal"

    @classmethod
    def from_args(cls, ns):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in vars(ns).items() if k in names})

    def validate(self):
        if self.problem not in ("l1lr", "shdual", "ncqp"):
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.inner == "rpcd" and self.problem != "shdual":
            raise ConfigurationError("--inner rpcd requires --problem shdual")
        if self.algorithm == "exact-ls" and self.problem != "shdual":
            raise ConfigurationError("--algorithm exact-ls requires --problem shdual")
        kind, _ = _split(self.model)
        if kind == "blockdiag" and self.problem != "shdual":
            raise ConfigurationError("--model blockdiag requires --problem shdual")
        if self.inner == "rpcd" and kind not in ("blockdiag", "hessian"):
            raise ConfigurationError("--inner rpcd needs an explicit model (blockdiag or hessian)")
        if self.problem != "ncqp" and self.data is not None and self.synthetic is not None:
            raise ConfigurationError("give --data or --synthetic, not both")
        if self.mode not in ("normal", "reference"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        return self


def _split(text):
    kind, _, arg = text.partition(":")
    return kind, arg


def _number(arg, kind, cast=float):
    try:
        return cast(arg)
    except (TypeError, ValueError):
        raise ConfigurationError(f"bad argument {arg!r} for {kind}") from None


def parse_policy(text):
    kind, arg = _split(text)
    try:
        if kind == "fixed":
            return Fixed(_number(arg, kind, int))
        if kind == "increasing":
            return Increasing(_number(arg, kind, int) if arg else 10)
        if kind == "gap":
            return GapCheck(_number(arg, kind))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    raise ConfigurationError(f"unknown inner policy {text!r}")


def build_problem(spec):
    if spec.problem == "ncqp":
        return random_indefinite_quadratic(spec.dim, seed=spec.seed)
    if spec.data is not None:
        try:
            ds = load_libsvm(spec.data)
        except (OSError, LibsvmParseError) as exc:
            raise DataError(f"{spec.data}: {exc}") from None
    else:
        shape = spec.synthetic or ("200,50" if spec.problem == "l1lr" else "100,20")
        try:
            n_samples, n_features = (int(v) for v in shape.split(","))
        except ValueError:
            raise ConfigurationError(f"--synthetic expects 'n_samples,n_features', got {shape!r}") from None
        ds = synthetic_dataset(n_samples, n_features, seed=spec.seed)
    try:
        if spec.problem == "l1lr":
            return make_l1_logreg(ds, spec.C)
        return make_squared_hinge_dual(ds, spec.C)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None


def build_source(spec, problem):
    try:
        return _build_source(spec, problem)
    except ValueError as exc:
        raise ConfigurationError(f"model {spec.model!r}: {exc}") from None


def _build_source(spec, problem):
    kind, arg = _split(spec.model)
    if kind == "identity":
        return FixedModelSource(IdentityModel(_number(arg or 1.0, kind), problem.dimension))
    if kind == "lbfgs":
        return LbfgsModelSource(problem.dimension, _number(arg or 10, kind, int))
    if kind == "blockdiag":
        nb = _number(arg or 16, kind, int)
        try:
            ranges = column_blocks(problem.dimension, min(nb, problem.dimension))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        return FixedModelSource(block_diagonal_model(problem, ranges))
    if kind == "hessian":
        dense = getattr(problem.smooth, "dense", None)
        if dense is None:
            dense = np.column_stack([problem.smooth.hessian_apply(None, e) for e in np.eye(problem.dimension)])
        return FixedModelSource(DenseModel(dense))
    raise ConfigurationError(f"unknown model {spec.model!r}")


def config_for(spec):
    max_outer, stop_tol = spec.max_outer, spec.stop_tol
    if spec.mode == "reference":
        max_outer, stop_tol = REFERENCE_FACTOR * max_outer, REFERENCE_TOL
    return OuterConfig(
        beta=spec.beta,
        gamma=spec.gamma,
        max_outer=max_outer,
        stop_tol=stop_tol,
        fstar=spec.fstar,
        algorithm=spec.algorithm,
        measure_eta=spec.measure_eta,
        timing=spec.timing,
    ).validate()


def execute(spec, policy=None):
    """Run one configured solve; returns ``(problem, trace)``. Raises on error."""
    spec.validate()
    policy = parse_policy(spec.inner_policy) if policy is None else policy
    cfg = config_for(spec)
    try:
        solver = get_solver(spec.inner)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    problem = build_problem(spec)
    source = build_source(spec, problem)
    if spec.algorithm == "mod1":
        probe = source.model(0, np.zeros(problem.dimension), problem.gradient(np.zeros(problem.dimension)))
        if not probe.lower_bound() > 0:
            raise ConfigurationError("--algorithm mod1 requires a positive definite model")
    trace = solve(problem, source, solver, policy, cfg, seed=spec.seed)
    return problem, trace


def make_report(spec, problem, trace):
    rep = {
        "spec": dataclasses.asdict(spec),
        "config": trace.config_dict(),
        "status": trace.status,
        "n_iter": trace.n_iter,
        "F_final": trace.F_final,
        "normG_final": trace.normG_final,
        "x_final": [float(v) for v in trace.x],
        "fstar": spec.fstar,
        "certification": None,
    }
    if spec.fstar is not None and spec.problem != "ncqp":
        try:
            cert = certify_rates(trace, problem.lipschitz(), spec.fstar, mu=problem.modulus())
            rep["certification"] = cert.to_dict()
        except ValueError as exc:
            rep["certification"] = {"skipped": str(exc)}
    elif spec.fstar is not None:
        try:
            cert = certify_rates(trace, problem.lipschitz(), spec.fstar, convex=False)
            rep["certification"] = cert.to_dict()
        except ValueError as exc:
            rep["certification"] = {"skipped": str(exc)}
    return rep


def _clean(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _guard(fn):
    """Map exceptions to exit codes with one-line diagnostics."""
    try:
        return fn()
    except DataError as exc:
        print(f"isqa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigurationError as exc:
        print(f"isqa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LineSearchError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"isqa: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def cmd_run(ns):
    spec = RunSpec.from_args(ns)

    def go():
        problem, trace = execute(spec)
        if ns.trace_out:
            _write(ns.trace_out, trace.to_csv())
        if ns.report_out:
            _write(ns.report_out, json.dumps(_clean(make_report(spec, problem, trace)), sort_keys=True, indent=1) + "\n")
        if not ns.trace_out and not ns.report_out:
            print(f"{trace.status} n_iter={trace.n_iter} F={trace.F_final:.17g}")
        return EXIT_OK

    return _guard(go)


def parse_T_list(text):
    items = [t for t in (text or "").split(",") if t.strip()]
    try:
        Ts = [int(t) for t in items]
    except ValueError:
        raise ConfigurationError(f"--T expects comma-separated integers, got {text!r}") from None
    if not Ts:
        raise ConfigurationError("--T list is empty")
    if any(T < 1 for T in Ts):
        raise ConfigurationError("every T must be >= 1")
    return Ts


def cmd_sweep(ns):
    spec = RunSpec.from_args(ns)
    try:
        Ts = parse_T_list(ns.T)
        spec.validate()
    except ConfigurationError as exc:
        print(f"isqa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T"] + TRACE_HEADER)
    summary = []
    worst = EXIT_OK
    for T in Ts:
        result = {}

        def go(T=T, result=result):
            _, trace = execute(dataclasses.replace(spec), policy=Fixed(T))
            result["trace"] = trace
            return EXIT_OK

        code = _guard(go)
        worst = max(worst, code)
        trace = result.get("trace")
        if trace is not None:
            for r in trace.records:
                w.writerow([str(T)] + r.csv_row())
        summary.append({
            "T": T,
            "exit": code,
            "status": trace.status if trace else None,
            "n_iter": trace.n_iter if trace else None,
            "F_final": trace.F_final if trace else None,
            "iterations_to_rel_err": (
                trace.iterations_to(ns.rel_err, spec.fstar) if trace and spec.fstar is not None else None
            ),
        })
    if ns.trace_out:
        _write(ns.trace_out, buf.getvalue())
    if ns.report_out:
        _write(ns.report_out, json.dumps(_clean({"spec": dataclasses.asdict(spec), "arms": summary}),
                                         sort_keys=True, indent=1) + "\n")
    if not ns.trace_out and not ns.report_out:
        for s in summary:
            print(f"T={s['T']} exit={s['exit']} status={s['status']} n_iter={s['n_iter']}")
    return worst


def _common(p):
    p.add_argument("--problem", choices=["l1lr", "shdual", "ncqp"], default="l1lr")
    p.add_argument("--data", help="LIBSVM file (l1lr, shdual)")
    p.add_argument("--synthetic", metavar="L,N", help="seeded synthetic data shape (default 200,50 or 100,20)")
    p.add_argument("--dim", type=int, default=30, help="dimension of the ncqp instance")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--algorithm", choices=["ls", "mod1", "mod2", "exact-ls"], default="ls")
    p.add_argument("--model", default="lbfgs:10", help="identity:ZETA | lbfgs:M | blockdiag:NB | hessian")
    p.add_argument("--inner", choices=["sparsa", "rpcd"], default="sparsa")
    p.add_argument("--inner-policy", default="fixed:10", help="fixed:T | increasing | gap:ETA")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1e-4)
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--stop-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fstar", type=float)
    p.add_argument("--trace-out", help="trace CSV path, '-' for stdout")
    p.add_argument("--report-out", help="report JSON path, '-' for stdout")
    p.add_argument("--measure-eta", action="store_true", help="measure eta against a reference solve")
    p.add_argument("--timing", action="store_true", help="fill the time_s column (breaks byte determinism)")
    p.add_argument("--mode", choices=["normal", "reference"], default="normal",
                   help="reference: 10x max-outer and stop-tol 1e-14, for computing F*")


def build_parser():
    parser = argparse.ArgumentParser(prog="isqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="one solve")
    _common(run)
    run.set_defaults(func=cmd_run)
    sweep = sub.add_parser("sweep", help="one solve per fixed inner budget T")
    _common(sweep)
    sweep.add_argument("--T", required=True, help="comma-separated inner iteration counts")
    sweep.add_argument("--rel-err", type=float, default=1e-6)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def _check_threads_env():
    raw = os.environ.get("ISQA_THREADS")
    if raw is None:
        return
    try:
        ok = int(raw) >= 1
    except ValueError:
        ok = False
    if not ok:
        raise ConfigurationError(f"ISQA_THREADS must be a positive integer, got {raw!r}")


def main(argv=None):
    ns = build_parser().parse_args(argv)
    code = _guard(lambda: _check_threads_env() or EXIT_OK)
    if code != EXIT_OK:
        return code
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
