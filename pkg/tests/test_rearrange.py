import numpy as np
import pytest

from skpd.linalg import KpdShape, kron, unvec, vec
from skpd.rearrange import inverse_rearrange, nonoverlap_conv, rearrange, rearrange_batch


def rearrange_oracle(c, shape):
    """Brute-force block extraction in the (j, k[, l]) listing order."""
    rows = []
    if shape.ndim == 2:
        p1, p2 = shape.grid_dims
        d1, d2 = shape.block_dims
        for j in range(p1):
            for k in range(p2):
                rows.append(c[j * d1 : (j + 1) * d1, k * d2 : (k + 1) * d2].ravel())
    else:
        p1, p2, p3 = shape.grid_dims
        d1, d2, d3 = shape.block_dims
        for j in range(p1):
            for k in range(p2):
                for l in range(p3):
                    rows.append(
                        c[
                            j * d1 : (j + 1) * d1,
                            k * d2 : (k + 1) * d2,
                            l * d3 : (l + 1) * d3,
                        ].ravel()
                    )
    return np.vstack(rows)


class TestRearrange:
    def test_single_block(self):
        c = np.arange(6.0).reshape(2, 3)
        s = KpdShape((2, 3), (2, 3))
        assert np.array_equal(rearrange(c, s), vec(c)[None, :])

    def test_unit_blocks(self):
        c = np.arange(6.0).reshape(2, 3)
        s = KpdShape((2, 3), (1, 1))
        assert np.array_equal(rearrange(c, s), vec(c)[:, None])

    def test_block_listing(self):
        c = np.array(
            [[1, 2, 5, 6], [3, 4, 7, 8], [9, 10, 13, 14], [11, 12, 15, 16]],
            dtype=float,
        )
        s = KpdShape((4, 4), (2, 2))
        expect = np.arange(1.0, 17.0).reshape(4, 4)
        assert np.array_equal(rearrange(c, s), expect)
        assert np.array_equal(rearrange(c, s), rearrange_oracle(c, s))

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(0)
        for dims, blocks in [((6, 8), (2, 4)), ((9, 6), (3, 2)), ((4, 4, 6), (2, 2, 3))]:
            s = KpdShape(dims, blocks)
            c = rng.standard_normal(dims)
            assert np.array_equal(rearrange(c, s), rearrange_oracle(c, s))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rearrange(np.ones((4, 4)), KpdShape((8, 8), (2, 2)))


class TestInverseRearrange:
    def test_roundtrip_2d(self):
        rng = np.random.default_rng(1)
        s = KpdShape((8, 8), (2, 2))
        c = rng.standard_normal((8, 8))
        assert np.array_equal(inverse_rearrange(rearrange(c, s), s), c)

    def test_roundtrip_3d(self):
        rng = np.random.default_rng(2)
        s = KpdShape((4, 4, 4), (2, 2, 2))
        c = rng.standard_normal((4, 4, 4))
        assert np.array_equal(inverse_rearrange(rearrange(c, s), s), c)

    def test_rank_one_gives_kron(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 2))
        b = rng.standard_normal((2, 4))
        s = KpdShape((6, 8), (2, 4))
        assert np.array_equal(
            inverse_rearrange(np.outer(vec(a), vec(b)), s), kron(a, b)
        )

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            inverse_rearrange(np.ones((3, 3)), KpdShape((4, 4), (2, 2)))


class TestKroneckerIdentity:
    def test_rank2_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            p1, p2 = rng.integers(1, 5, size=2)
            d1, d2 = rng.integers(1, 5, size=2)
            a = rng.standard_normal((p1, p2))
            b = rng.standard_normal((d1, d2))
            s = KpdShape((p1 * d1, p2 * d2), (d1, d2))
            assert np.array_equal(rearrange(kron(a, b), s), np.outer(vec(a), vec(b)))

    def test_rank3_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = rng.integers(1, 4, size=3)
            d = rng.integers(1, 4, size=3)
            a = rng.standard_normal(tuple(p))
            b = rng.standard_normal(tuple(d))
            s = KpdShape(tuple(p * d), tuple(d))
            assert np.array_equal(rearrange(kron(a, b), s), np.outer(vec(a), vec(b)))

    def test_linearity(self):
        rng = np.random.default_rng(6)
        s = KpdShape((6, 6), (3, 2))
        c1 = rng.standard_normal((6, 6))
        c2 = rng.standard_normal((6, 6))
        alpha = 1.7
        assert np.allclose(
            rearrange(alpha * c1 + c2, s),
            alpha * rearrange(c1, s) + rearrange(c2, s),
            atol=1e-12,
        )

    def test_multi_term_sum(self):
        rng = np.random.default_rng(7)
        s = KpdShape((6, 8), (2, 4))
        total = np.zeros((6, 8))
        expect = np.zeros((s.n_blocks, s.block_size))
        for _ in range(3):
            a = rng.standard_normal((3, 2))
            b = rng.standard_normal((2, 4))
            total += kron(a, b)
            expect += np.outer(vec(a), vec(b))
        assert np.allclose(rearrange(total, s), expect, atol=1e-12)


class TestNonoverlapConv:
    def test_unit_filter(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 5))
        assert np.array_equal(nonoverlap_conv(x, np.array([[1.0]])), x)

    def test_hand_example(self):
        x = np.arange(1.0, 17.0).reshape(4, 4)
        got = nonoverlap_conv(x, np.eye(2))
        assert np.array_equal(got, np.array([[7.0, 11.0], [23.0, 27.0]]))

    def test_adjoint_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            a = rng.standard_normal((3, 2))
            b = rng.standard_normal((2, 4))
            x = rng.standard_normal((6, 8))
            lhs = float(np.sum(a * nonoverlap_conv(x, b)))
            rhs = float(np.sum(x * kron(a, b)))
            assert abs(lhs - rhs) <= 1e-10

    def test_equals_rearrange_route(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((6, 6))
        b = rng.standard_normal((2, 3))
        s = KpdShape((6, 6), (2, 3))
        assert np.array_equal(
            nonoverlap_conv(x, b), unvec(rearrange(x, s) @ vec(b), s.grid_dims)
        )

    def test_divisibility_error(self):
        with pytest.raises(ValueError):
            nonoverlap_conv(np.ones((5, 5)), np.ones((2, 2)))


def test_rearrange_batch_matches_loop():
    rng = np.random.default_rng(11)
    s = KpdShape((4, 6), (2, 3))
    imgs = rng.standard_normal((5, 4, 6))
    got = rearrange_batch(imgs, s)
    for i in range(5):
        assert np.array_equal(got[i], rearrange(imgs[i], s))
