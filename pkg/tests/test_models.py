import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isqa.models import (
    GAMMA_CLAMP,
    SAFEGUARD,
    BlockDiagonalModel,
    DenseModel,
    FixedModelSource,
    IdentityModel,
    LbfgsModel,
    LbfgsModelSource,
    LbfgsState,
    block_diagonal_model,
    identity_model,
    lbfgs_apply,
    lbfgs_update,
)


def dense_bfgs(pairs, gamma0, dim):
    B = np.eye(dim) / gamma0
    for s, y in pairs:
        Bs = B @ s
        B = B - np.outer(Bs, Bs) / (s @ Bs) + np.outer(y, y) / (y @ s)
    return B


def random_pairs(rng, dim, count):
    A = rng.standard_normal((dim, dim))
    S = A @ A.T + np.eye(dim)
    pairs = []
    for _ in range(count):
        s = rng.standard_normal(dim)
        pairs.append((s, S @ s))
    return pairs


def assert_bounds_certified(model, rng, n=1000):
    V = rng.standard_normal((n, model.dim))
    rq = np.einsum("ij,ij->i", V, np.array([model.apply(v) for v in V])) / np.einsum("ij,ij->i", V, V)
    assert model.lower_bound() <= rq.min() + 1e-12 * abs(rq.min())
    assert rq.max() <= model.upper_bound() + 1e-12 * abs(rq.max())


class TestIdentity:
    def test_apply_and_bounds(self):
        m = identity_model(1.0, 2)
        np.testing.assert_array_equal(m.apply(np.array([1.0, 2.0])), [1.0, 2.0])
        assert (m.lower_bound(), m.upper_bound()) == (1.0, 1.0)

    def test_shift(self):
        m = IdentityModel(3.0, 2).shift(2.0)
        np.testing.assert_allclose(m.apply(np.array([1.0, -1.0])), [5.0, -5.0])
        assert m.lower_bound() == m.upper_bound() == 5.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            IdentityModel(0.0, 2)
        with pytest.raises(ValueError):
            IdentityModel(1.0, 2).scale(0.0)
        with pytest.raises(ValueError):
            IdentityModel(1.0, 2).shift(-1.0)


class TestScaleShiftAlgebra:
    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(st.sampled_from(["scale", "shift"]), st.floats(0.1, 10.0)),
            max_size=5,
        ),
        st.integers(0, 1000),
    )
    def test_bounds_follow_operations(self, ops, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((5, 5))
        m = DenseModel(A + A.T)
        lo, hi = m.lower_bound(), m.upper_bound()
        H = m.to_dense()
        v = rng.standard_normal(5)
        for op, val in ops:
            before = m.apply(v)
            if op == "scale":
                m.scale(val)
                lo, hi, H = lo * val, hi * val, H * val
                np.testing.assert_allclose(m.apply(v), val * before, rtol=1e-12, atol=1e-12)
            else:
                m.shift(val)
                lo, hi, H = lo + val, hi + val, H + val * np.eye(5)
                np.testing.assert_allclose(m.apply(v), before + val * v, rtol=1e-12, atol=1e-12)
        assert m.lower_bound() == pytest.approx(lo)
        assert m.upper_bound() == pytest.approx(hi)
        np.testing.assert_allclose(m.to_dense(), H, rtol=1e-12, atol=1e-10)
        assert_bounds_certified(m, rng, n=200)

    def test_copy_is_independent(self):
        m = IdentityModel(1.0, 3)
        c = m.copy().shift(1.0)
        assert m.upper_bound() == 1.0 and c.upper_bound() == 2.0


class TestBlockDiagonal:
    def test_masked_dense_oracle(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((4, 4))
        K = A @ A.T
        ranges = [range(0, 2), range(2, 4)]
        m = BlockDiagonalModel([K[:2, :2], K[2:, 2:]], ranges)
        mask = np.zeros((4, 4))
        mask[:2, :2] = mask[2:, 2:] = 1
        v = rng.standard_normal(4)
        np.testing.assert_allclose(m.apply(v), (K * mask) @ v)
        assert_bounds_certified(m, rng)

    def test_single_block_is_full_matrix(self):
        K = np.array([[2.0, 1.0], [1.0, 3.0]])
        m = BlockDiagonalModel([K], [range(2)])
        np.testing.assert_allclose(m.to_dense(), K)

    def test_from_problem(self):
        from isqa.dataio import synthetic_dataset
        from isqa.problems import make_squared_hinge_dual

        ds = synthetic_dataset(6, 3, seed=1)
        p = make_squared_hinge_dual(ds, C=1.0)
        m = block_diagonal_model(p, [range(i, i + 1) for i in range(6)])
        Z = ds.labels[:, None] * ds.features.toarray()
        np.testing.assert_allclose(m.diagonal(), (Z**2).sum(1) + 0.5)

    def test_blocks_are_scaled(self):
        m = BlockDiagonalModel([np.eye(2), 2 * np.eye(1)], [range(2), range(2, 3)])
        m.scale(3.0).shift(1.0)
        (r0, b0), (r1, b1) = m.blocks()
        np.testing.assert_allclose(b0, 4 * np.eye(2))
        np.testing.assert_allclose(b1, [[7.0]])

    @pytest.mark.parametrize("ranges", [[range(0, 2), range(3, 4)], [range(0, 2)]])
    def test_partition_mismatch(self, ranges):
        with pytest.raises(ValueError):
            BlockDiagonalModel([np.eye(2), np.eye(1)], ranges)


class TestLbfgs:
    def test_empty_memory_is_identity(self):
        st_ = LbfgsState(3)
        np.testing.assert_array_equal(lbfgs_apply(st_, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])

    def test_safeguard(self):
        st_ = LbfgsState(2)
        assert lbfgs_update(st_, np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert not lbfgs_update(st_, np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
        assert len(st_.pairs) == 1 and st_.n_rejected == 1
        assert not st_.update(np.array([1.0, 0.0]), np.array([0.5 * SAFEGUARD, 1.0]))

    def test_one_pair_dense_oracle(self):
        rng = np.random.default_rng(1)
        st_ = LbfgsState(4)
        (s, y), = random_pairs(rng, 4, 1)
        st_.update(s, y)
        B = dense_bfgs([(s, y)], st_.gamma0, 4)
        v = rng.standard_normal(4)
        np.testing.assert_allclose(lbfgs_apply(st_, v), B @ v, rtol=1e-10)

    def test_many_pairs_dense_oracle_and_symmetry(self):
        rng = np.random.default_rng(2)
        st_ = LbfgsState(6, memory=4)
        pairs = random_pairs(rng, 6, 7)
        for s, y in pairs:
            st_.update(s, y)
        assert len(st_.pairs) == 4
        m = LbfgsModel(st_)
        B = dense_bfgs(pairs[-4:], st_.gamma0, 6)
        np.testing.assert_allclose(m.to_dense(), B, rtol=1e-9, atol=1e-9)
        u, v = rng.standard_normal((2, 6))
        assert u @ m.apply(v) == pytest.approx(v @ m.apply(u), rel=1e-10)
        assert_bounds_certified(m, rng)
        assert m.lower_bound() > 0

    def test_gamma_clamp(self):
        st_ = LbfgsState(1)
        st_.update(np.array([1.0]), np.array([1e-20 + SAFEGUARD * 2]))
        assert GAMMA_CLAMP[0] <= st_.gamma0 <= GAMMA_CLAMP[1]

    def test_bounds_along_a_run(self):
        from isqa.dataio import synthetic_dataset
        from isqa.outer import OuterConfig, solve
        from isqa.problems import make_l1_logreg
        from isqa.subsolvers import Fixed, sparsa_solve

        p = make_l1_logreg(synthetic_dataset(60, 10, seed=0))
        tr = solve(p, LbfgsModelSource(10, 5), sparsa_solve, Fixed(10), OuterConfig(max_outer=30))
        lows = [r.sigmaH for r in tr.records]
        highs = [r.MH for r in tr.records]
        assert min(lows) > 0
        assert max(highs) < 1.0 / GAMMA_CLAMP[0]
        for r in tr.records:
            assert_bounds_certified(r.model, np.random.default_rng(r.k), n=100)

    def test_sources(self):
        src = FixedModelSource(IdentityModel(2.0, 2))
        a, b = src.model(0), src.model(1)
        a.shift(1.0)
        assert b.upper_bound() == 2.0
        lsrc = LbfgsModelSource(2)
        lsrc.observe(np.zeros(2), np.ones(2))
        lsrc.observe(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
        assert lsrc.model(0).apply(np.array([1.0, 0.0]))[0] == pytest.approx(2.0)
