import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skpd.linalg import (
    ConvergenceError,
    KpdShape,
    NonPsdError,
    SingularMatrixError,
    kron,
    sym_inv_sqrt,
    top_left_singular,
    unvec,
    vec,
)


def dense_svd_oracle(m, k):
    """Full SVD by LAPACK; independent of the power-iteration path."""
    u, _, _ = np.linalg.svd(np.asarray(m, float), full_matrices=False)
    return u[:, :k]


def kron2_oracle(a, b):
    """Direct evaluation of the block definition."""
    p1, p2 = a.shape
    d1, d2 = b.shape
    out = np.zeros((p1 * d1, p2 * d2))
    for j in range(p1):
        for k in range(p2):
            for u in range(d1):
                for v in range(d2):
                    out[j * d1 + u, k * d2 + v] = a[j, k] * b[u, v]
    return out


def kron3_oracle(a, b):
    """Slice rule: slice k of the product pairs slice k1 of a with k2 of b."""
    p1, p2, p3 = a.shape
    d1, d2, d3 = b.shape
    out = np.zeros((p1 * d1, p2 * d2, p3 * d3))
    for k in range(p3 * d3):
        k1 = k // d3
        k2 = k - k1 * d3
        out[:, :, k] = kron2_oracle(a[:, :, k1], b[:, :, k2])
    return out


class TestKpdShape:
    def test_grid_derivation(self):
        s = KpdShape((128, 128), (8, 8))
        assert s.grid_dims == (16, 16)
        assert s.n_blocks == 256
        assert s.block_size == 64

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            KpdShape((10, 10), (3, 3))

    def test_rank_mismatch(self):
        with pytest.raises(ValueError):
            KpdShape((8, 8, 8), (2, 2))

    def test_rank_must_be_2_or_3(self):
        with pytest.raises(ValueError):
            KpdShape((8,), (2,))


class TestVecUnvec:
    def test_row_major_order(self):
        assert np.array_equal(vec([[1, 2], [3, 4]]), [1, 2, 3, 4])

    def test_rank1_identity(self):
        v = np.array([3.0, 1.0, 4.0])
        assert np.array_equal(vec(v), v)

    def test_rank3_fill(self):
        t = np.arange(1, 9, dtype=float).reshape(2, 2, 2)
        assert np.array_equal(vec(t), np.arange(1, 9, dtype=float))

    def test_unvec_example(self):
        assert np.array_equal(unvec([1, 2, 3, 4], (2, 2)), [[1, 2], [3, 4]])

    def test_unvec_singleton(self):
        assert np.array_equal(unvec([7.0], (1, 1)), [[7.0]])

    def test_unvec_mismatch(self):
        with pytest.raises(ValueError):
            unvec([1.0, 2.0, 3.0], (2, 2))

    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 5))
        assert np.array_equal(unvec(vec(a), a.shape), a)

    @given(st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=4))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_all_ranks(self, dims):
        rng = np.random.default_rng(sum(dims))
        a = rng.standard_normal(tuple(dims))
        assert np.array_equal(unvec(vec(a), dims), a)


class TestKron:
    def test_scalar_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(kron(np.array([[1.0]]), b), b)

    def test_block_definition(self):
        a = np.array([[1.0, 2.0], [0.0, 1.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        expect = np.array(
            [[0, 1, 0, 2], [1, 0, 2, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float
        )
        assert np.array_equal(kron(a, b), expect)
        assert np.array_equal(kron(a, b), kron2_oracle(a, b))

    def test_sign_change_invariance(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 2))
        b = rng.standard_normal((2, 4))
        assert np.array_equal(kron(-a, -b), kron(a, b))

    def test_bilinearity(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((3, 2))
        alpha = rng.standard_normal()
        assert np.allclose(kron(alpha * a, b), alpha * kron(a, b), atol=1e-12)

    def test_rank3_matches_slice_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((2, 3, 2))
        b = rng.standard_normal((3, 2, 2))
        assert np.array_equal(kron(a, b), kron3_oracle(a, b))

    def test_rank_mismatch(self):
        with pytest.raises(ValueError):
            kron(np.ones((2, 2)), np.ones((2, 2, 2)))


class TestTopLeftSingular:
    def test_exact_rank_one(self):
        rng = np.random.default_rng(4)
        u = rng.standard_normal(6)
        u /= np.linalg.norm(u)
        v = rng.standard_normal(4)
        m = np.outer(u, v)
        got = top_left_singular(m, 1)[:, 0]
        ref = u if u[np.argmax(np.abs(u))] > 0 else -u
        assert np.allclose(got, ref, atol=1e-10)

    def test_diagonal_case(self):
        m = np.zeros((5, 3))
        m[0, 0], m[1, 1], m[2, 2] = 3.0, 2.0, 1.0
        got = top_left_singular(m, 2)
        assert np.allclose(got, np.eye(5)[:, :2], atol=1e-10)

    def test_matches_full_svd_oracle(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((20, 8))
        got = top_left_singular(m, 3)
        ref = dense_svd_oracle(m, 3)
        for j in range(3):
            sign = np.sign(ref[np.argmax(np.abs(got[:, j])), j] * got[np.argmax(np.abs(got[:, j])), j])
            assert np.allclose(got[:, j], sign * ref[:, j], atol=1e-8)

    def test_orthonormal_columns(self):
        rng = np.random.default_rng(6)
        for trial in range(5):
            m = rng.standard_normal((12, 7))
            q = top_left_singular(m, 4)
            assert np.linalg.norm(q.T @ q - np.eye(4)) <= 1e-10

    def test_sign_rule(self):
        u = np.array([0.1, -0.9, 0.2])
        u /= np.linalg.norm(u)
        m = np.outer(u, np.ones(3))
        got = top_left_singular(m, 1)[:, 0]
        assert got[np.argmax(np.abs(got))] > 0

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            top_left_singular(np.ones((3, 2)), 3)

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            top_left_singular(np.zeros((4, 4)), 1)

    def test_budget_exhaustion_reports_residual(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((30, 30))
        with pytest.raises(ConvergenceError) as err:
            top_left_singular(m, 2, max_iter=1)
        assert err.value.residual is not None


class TestSymInvSqrt:
    def test_identity(self):
        assert np.allclose(sym_inv_sqrt(np.eye(3), 0.0), np.eye(3), atol=1e-12)

    def test_diagonal(self):
        got = sym_inv_sqrt(np.diag([4.0, 9.0]), 0.0)
        assert np.allclose(got, np.diag([0.5, 1.0 / 3.0]), atol=1e-12)

    def test_gram_inverse_property(self):
        rng = np.random.default_rng(8)
        g = rng.standard_normal((5, 3))
        s = g.T @ g
        m = sym_inv_sqrt(s, 0.0)
        assert np.linalg.norm(m @ s @ m - np.eye(3)) <= 1e-8

    def test_ridge_property(self):
        rng = np.random.default_rng(9)
        g = rng.standard_normal((6, 4))
        s = g.T @ g
        eta = 0.37
        m = sym_inv_sqrt(s, eta)
        assert np.linalg.norm(m @ (s + eta * np.eye(4)) @ m - np.eye(4)) <= 1e-8

    def test_non_psd_detected(self):
        with pytest.raises(NonPsdError):
            sym_inv_sqrt(np.diag([1.0, -1.0]), 0.0)

    def test_singular_detected(self):
        with pytest.raises(SingularMatrixError):
            sym_inv_sqrt(np.zeros((2, 2)), 0.0)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            sym_inv_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]), 0.0)
