import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import enumerate_sign_patterns
from isqa.dataio import column_blocks, synthetic_dataset
from isqa.models import DenseModel, IdentityModel, block_diagonal_model
from isqa.problems import L1Norm, NonnegativeIndicator, ZeroRegularizer, make_squared_hinge_dual
from isqa.subsolvers import (
    Fixed,
    GapCheck,
    Increasing,
    NoDescentError,
    Subproblem,
    get_solver,
    inner_seed,
    reference_qstar,
    rpcd_solve,
    sparsa_solve,
)


def l1_sub(seed, dim=2, w=None):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dim, dim))
    H = A @ A.T + 0.1 * np.eye(dim)
    x = rng.standard_normal(dim)
    g = 2.0 * rng.standard_normal(dim)
    w = rng.uniform(0.1, 2.0) if w is None else w
    return Subproblem(x, g, DenseModel(H), L1Norm(w)), H


def dual_sub(seed=0, n_blocks=3, l=30):
    ds = synthetic_dataset(l, 6, seed=seed)
    p = make_squared_hinge_dual(ds, C=1.0)
    rng = np.random.default_rng(seed)
    x = np.maximum(rng.standard_normal(l), 0.0)
    model = block_diagonal_model(p, column_blocks(l, n_blocks))
    return Subproblem(x, p.gradient(x), model, p.reg)


class TestPolicies:
    def test_fixed(self):
        assert Fixed(7).budget(100) == 7
        with pytest.raises(ValueError):
            Fixed(0)

    def test_increasing(self):
        assert [Increasing().budget(k) for k in (0, 9, 10, 25)] == [1, 1, 2, 3]

    def test_gap_eta_range(self):
        with pytest.raises(ValueError):
            GapCheck(1.0)


class TestSparsa:
    def test_identity_metric_one_step_exact(self):
        g = np.array([1.0, -2.0, 0.5])
        sub = Subproblem(np.zeros(3), g, IdentityModel(1.0, 3), ZeroRegularizer())
        res = sparsa_solve(sub, Fixed(1))
        np.testing.assert_allclose(res.d, -g)
        assert res.Q_d == pytest.approx(-0.5 * g @ g)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_reference_matches_enumeration(self, seed):
        sub, H = l1_sub(seed)
        exact = enumerate_sign_patterns(sub.x, sub.grad, H, sub.reg.weight)
        assert reference_qstar(sub) == pytest.approx(exact, abs=1e-10)

    def test_three_dim_enumeration(self):
        for seed in range(20):
            sub, H = l1_sub(seed, dim=3)
            exact = enumerate_sign_patterns(sub.x, sub.grad, H, sub.reg.weight)
            assert reference_qstar(sub) == pytest.approx(exact, abs=1e-10)

    def test_fixed_budget_gives_eta_below_one(self):
        for seed in range(30):
            sub, H = l1_sub(seed, dim=4)
            qstar = reference_qstar(sub)
            if qstar < 0:
                res = sparsa_solve(sub, Fixed(2))
                assert res.Q_d < 0 and 1 - res.Q_d / qstar < 1

    def test_linear_decay(self):
        sub, _ = l1_sub(3, dim=8)
        qstar = reference_qstar(sub)
        res = sparsa_solve(sub, Fixed(60), record=True)
        gaps = np.array(res.history) - qstar
        assert gaps[-1] <= 1e-6 * gaps[0]

    def test_gap_policy_meets_target(self):
        sub, _ = l1_sub(5, dim=6)
        qstar = reference_qstar(sub)
        res = sparsa_solve(sub, GapCheck(0.2))
        assert res.Q_d <= 0.8 * qstar
        assert res.measured_eta is not None and res.measured_eta <= 0.2 + 1e-12

    def test_no_descent_at_minimizer(self):
        sub = Subproblem(np.zeros(2), np.array([0.1, -0.1]), IdentityModel(1.0, 2), L1Norm(1.0))
        with pytest.raises(NoDescentError):
            sparsa_solve(sub, Fixed(5))

    def test_best_iterate_is_returned(self):
        sub, _ = l1_sub(11, dim=5)
        res = sparsa_solve(sub, Fixed(15), record=True)
        assert res.Q_d == pytest.approx(min(res.history))
        assert sub.value(res.d) == pytest.approx(res.Q_d)


class TestRpcd:
    def test_converges_to_exact_bounded_qp(self):
        sub = dual_sub()
        res = rpcd_solve(sub, Fixed(2000))
        assert res.Q_d == pytest.approx(reference_qstar(sub), rel=1e-9)
        assert np.all(sub.x + res.d >= 0)
        assert sub.value(res.d) == pytest.approx(res.Q_d, rel=1e-10)

    def test_monotone_in_sweeps(self):
        sub = dual_sub(1)
        res = rpcd_solve(sub, Fixed(30), seed=4, record=True)
        assert np.all(np.diff(res.history) <= 1e-12)

    def test_threads_do_not_change_result(self, monkeypatch):
        sub = dual_sub(2, n_blocks=4)
        monkeypatch.setenv("ISQA_THREADS", "1")
        a = rpcd_solve(sub, Fixed(5), seed=9)
        monkeypatch.setenv("ISQA_THREADS", "4")
        b = rpcd_solve(sub, Fixed(5), seed=9)
        np.testing.assert_array_equal(a.d, b.d)

    def test_seeded(self):
        sub = dual_sub(3)
        a, b = rpcd_solve(sub, Fixed(3), seed=1), rpcd_solve(sub, Fixed(3), seed=1)
        np.testing.assert_array_equal(a.d, b.d)

    def test_requires_nonnegative_constraint(self):
        sub = Subproblem(np.zeros(2), np.ones(2), IdentityModel(1.0, 2), L1Norm(0.1))
        with pytest.raises(TypeError):
            rpcd_solve(sub, Fixed(1))

    def test_single_coordinate_update(self):
        sub = Subproblem(np.array([1.0]), np.array([4.0]), IdentityModel(2.0, 1), NonnegativeIndicator())
        res = rpcd_solve(sub, Fixed(1))
        # unconstrained step -2 is clipped at -x = -1
        np.testing.assert_allclose(res.d, [-1.0])


def test_inner_seed_is_deterministic_and_varies():
    assert inner_seed(0, 3) == inner_seed(0, 3)
    assert len({inner_seed(0, k) for k in range(50)}) == 50


def test_get_solver():
    assert get_solver("sparsa") is sparsa_solve
    with pytest.raises(ValueError):
        get_solver("cg")


def test_env_threads_default():
    os.environ.pop("ISQA_THREADS", None)
    sub = dual_sub(4)
    assert rpcd_solve(sub, Fixed(1)).inner_iters == 1
