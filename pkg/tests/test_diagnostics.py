import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isqa.dataio import synthetic_dataset
from isqa.diagnostics import (
    RateReport,
    UnsupportedDiagnostic,
    certify_rates,
    check_qstar_bound,
    m_tilde_1,
    m_tilde_2,
    measure_eta,
    prox_grad_stationarity,
    random_sequence_instance,
    sequence_lemma_oracle,
    SequenceInstance,
    stationarity_bound_linesearch,
    step_size_lower_bound,
    tseng_yun_factor,
)
from isqa.models import IdentityModel, LbfgsModelSource
from isqa.outer import OuterConfig, solve
from isqa.problems import make_l1_logreg
from isqa.subsolvers import Fixed, Subproblem, reference_qstar, sparsa_solve


@pytest.fixture(scope="module")
def logreg():
    return make_l1_logreg(synthetic_dataset(60, 10, seed=3), C=1.0)


@pytest.fixture(scope="module")
def solved(logreg):
    cfg = OuterConfig(max_outer=400, stop_tol=1e-12)
    return solve(logreg, LbfgsModelSource(10), sparsa_solve, Fixed(100), cfg)


class TestStationarity:
    def test_zero_at_solution(self, logreg, solved):
        # the logistic loss reaches a roundoff floor near 1e-8
        assert np.linalg.norm(prox_grad_stationarity(logreg, solved.x)) < 1e-6

    def test_nonzero_elsewhere(self, logreg):
        x = np.ones(10)
        assert np.linalg.norm(prox_grad_stationarity(logreg, x)) > 1e-3

    def test_zero_is_stationary_when_gradient_small(self, logreg):
        # ||grad f(0)||_inf <= 1 means 0 minimizes f + ||.||_1
        tiny = make_l1_logreg(synthetic_dataset(60, 10, seed=3), C=1e-3)
        np.testing.assert_array_equal(prox_grad_stationarity(tiny, np.zeros(10)), 0.0)

    def test_unsupported_regularizer(self):
        problem = SimpleNamespace(reg=object(), gradient=lambda x: x)
        with pytest.raises(UnsupportedDiagnostic):
            prox_grad_stationarity(problem, np.zeros(2))


class TestMeasureEta:
    def test_zero_step_gives_one(self, logreg):
        x = np.zeros(10)
        sub = Subproblem(x, logreg.gradient(x), IdentityModel(1.0, 10), logreg.reg)
        qstar = reference_qstar(sub)
        assert measure_eta(sub, np.zeros(10), qstar) == pytest.approx(1.0)

    def test_exact_step_gives_zero(self, logreg):
        x = np.zeros(10)
        sub = Subproblem(x, logreg.gradient(x), IdentityModel(1.0, 10), logreg.reg)
        d = logreg.reg.prox(x - sub.grad, 1.0) - x
        assert measure_eta(sub, d, reference_qstar(sub)) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_nonnegative_reference(self, logreg):
        sub = Subproblem(np.zeros(10), np.zeros(10), IdentityModel(1.0, 10), logreg.reg)
        with pytest.raises(ValueError):
            measure_eta(sub, np.zeros(10), 0.0)


class TestConstants:
    def test_step_bound(self):
        assert step_size_lower_bound(0.5, 0.0, 1.0, 1.0, 0.0) == pytest.approx(1.0)
        assert step_size_lower_bound(0.5, 0.0, 1.0, 4.0, 0.0) == pytest.approx(0.25)
        assert step_size_lower_bound(0.5, 0.0, 1.0, 4.0, 1.0) == pytest.approx(0.125)

    def test_tseng_yun_identity(self):
        # sigma = M = 1: G = d*, so c = 1
        assert tseng_yun_factor(1.0, 1.0) == pytest.approx(1.0)

    @given(st.floats(1e-3, 1e3), st.floats(1.0, 1e3))
    def test_tseng_yun_at_least_M(self, sigma, ratio):
        M = sigma * ratio
        assert tseng_yun_factor(sigma, M) >= 0.5 * M * (1 + 1 / sigma) - 1e-9 * M

    def test_m_tilde_exact_model(self):
        # eta = 0, gamma = 0: c1 = 2, so scaling stops once L <= 2 beta m0
        assert m_tilde_1(0.0, 1.0, 0.5, 0.0, 1.0, 1.0) == pytest.approx(1.0)
        assert m_tilde_1(0.0, 4.0, 0.5, 0.0, 1.0, 1.0) == pytest.approx(4.0)
        assert m_tilde_2(0.0, 4.0, 0.5, 0.0, 1.0, 1.0) == pytest.approx(1.0 + 2.0)
        with pytest.raises(ValueError):
            m_tilde_1(0.0, 1.0, 0.5, 0.0, 0.0, 1.0)

    def test_stationarity_bound_decreases(self):
        b = [stationarity_bound_linesearch(1.0, 1e-4, k, 1.0, 2.0, 0.5, 0.5) for k in range(5)]
        assert all(x > y for x, y in zip(b, b[1:]))
        assert b[0] == pytest.approx(1e4 * 2 * tseng_yun_factor(1.0, 2.0) ** 2 / 0.25)


class TestCertify:
    def test_converged_run_is_certified(self, logreg, solved):
        tr = solve(logreg, LbfgsModelSource(10), sparsa_solve, Fixed(10),
                   OuterConfig(max_outer=100, measure_eta=True, fstar=solved.F_final, rel_tol=1e-10))
        rep = certify_rates(tr, logreg.lipschitz(), solved.F_final, xstar=solved.x)
        assert rep.ok, rep.violations
        assert rep.checks["min_abs_Q"] == tr.n_iter
        assert len(rep.ratios) == tr.n_iter

    def test_needs_fstar_and_eta(self, logreg, solved):
        tr = solve(logreg, LbfgsModelSource(10), sparsa_solve, Fixed(10), OuterConfig(max_outer=5))
        with pytest.raises(ValueError):
            certify_rates(tr, 1.0, None)
        with pytest.raises(ValueError):
            certify_rates(tr, 1.0, solved.F_final)
        assert certify_rates(tr, logreg.lipschitz(), solved.F_final, eta_bar=0.9).checks

    def test_wrong_fstar_is_flagged(self, logreg, solved):
        tr = solve(logreg, LbfgsModelSource(10), sparsa_solve, Fixed(10),
                   OuterConfig(max_outer=30, measure_eta=True))
        # gamma = 1 and a huge mu demand a contraction the run cannot deliver
        rep = certify_rates(tr, logreg.lipschitz(), solved.F_final, mu=1e6, gamma=1.0)
        assert rep.violated("linear_rate")

    def test_json_round_trip(self):
        rep = RateReport("ls", {"b": 1.0, "a": float("inf")}, ratios=[np.float64(0.5)])
        s = rep.to_json()
        d = json.loads(s)
        assert d["constants"]["a"] is None and d["ratios"] == [0.5]
        assert s == json.dumps(d, sort_keys=True)


class TestSequenceOracle:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    def test_random_instances_satisfy_recurrence_bounds(self, seed, A):
        inst = random_sequence_instance(np.random.default_rng(seed), n_steps=100, A=A)
        v = sequence_lemma_oracle(inst)
        assert v.ok, v.violations
        assert np.all(np.diff(v.deltas) <= 1e-12 * max(1.0, inst.delta0))

    def test_k0_is_first_index_below_A(self):
        inst = SequenceInstance(5.0, np.ones(20), np.ones(20), 1.0)
        v = sequence_lemma_oracle(inst)
        assert v.k0 is not None and v.deltas[v.k0] < 1.0 <= v.deltas[v.k0 - 1]

    @pytest.mark.parametrize(
        "args", [(-1.0, [1.0], [1.0], 1.0), (1.0, [3.0], [1.0], 1.0), (1.0, [1.0], [2.0], 1.0)]
    )
    def test_invalid_instances(self, args):
        with pytest.raises(ValueError):
            SequenceInstance(*args)


class TestQstarBound:
    def test_requires_reference(self, logreg, solved):
        tr = solve(logreg, LbfgsModelSource(10), sparsa_solve, Fixed(5), OuterConfig(max_outer=3))
        with pytest.raises(ValueError):
            check_qstar_bound(tr, 1.0, solved.F_final)
        with pytest.raises(ValueError):
            check_qstar_bound(tr, 0.0, solved.F_final)

    def test_holds_for_small_mu(self, logreg, solved):
        tr = solve(logreg, LbfgsModelSource(10), sparsa_solve, Fixed(5),
                   OuterConfig(max_outer=10, measure_eta=True))
        assert check_qstar_bound(tr, 1e-8, solved.F_final) == []
