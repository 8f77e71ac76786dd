import numpy as np
import pytest

from skpd.linalg import SingularMatrixError
from skpd.solvers import (
    RankDeficiencyError,
    lasso_cd,
    ols,
    orthonormalize,
    soft_threshold,
)


def ols_oracle(x, y, ridge=0.0):
    """Normal equations by a dense solve, independent of the Cholesky path."""
    n, q = x.shape
    return np.linalg.solve(x.T @ x / n + ridge * np.eye(q), x.T @ y / n)


def orthogonal_design(rng, n, q):
    """Design with X^T X = n I, where the lasso has a closed form."""
    m = rng.standard_normal((n, q))
    qmat, _ = np.linalg.qr(m)
    return np.sqrt(n) * qmat


class TestOls:
    def test_identity_design(self):
        y = np.array([3.0, -1.0, 2.0])
        assert np.allclose(ols(np.eye(3), y), y, atol=1e-12)

    def test_orthogonal_columns(self):
        rng = np.random.default_rng(0)
        n, q = 32, 4
        x = orthogonal_design(rng, n, q)
        y = rng.standard_normal(n)
        assert np.allclose(ols(x, y), x.T @ y / n, atol=1e-10)

    def test_matches_normal_equation_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((50, 4))
        y = rng.standard_normal(50)
        assert np.allclose(ols(x, y), ols_oracle(x, y), atol=1e-9)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((40, 6))
        y = rng.standard_normal(40)
        beta = ols(x, y)
        r = y - x @ beta
        assert np.max(np.abs(x.T @ r)) <= 1e-8 * np.linalg.norm(y)

    def test_rank_deficiency_suggests_ridge(self):
        rng = np.random.default_rng(3)
        col = rng.standard_normal(20)
        x = np.column_stack([col, col])
        with pytest.raises(RankDeficiencyError, match="ridge"):
            ols(x, rng.standard_normal(20))

    def test_ridge_handles_rank_deficiency(self):
        rng = np.random.default_rng(4)
        col = rng.standard_normal(20)
        x = np.column_stack([col, col])
        y = rng.standard_normal(20)
        beta = ols(x, y, ridge=0.05)
        assert np.allclose(beta, ols_oracle(x, y, 0.05), atol=1e-8)

    def test_ridge_objective(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((30, 3))
        y = rng.standard_normal(30)
        assert np.allclose(ols(x, y, ridge=0.7), ols_oracle(x, y, 0.7), atol=1e-10)


class TestSoftThreshold:
    def test_examples(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-0.5, 1.0) == 0.0
        assert soft_threshold(0.0, 2.5) == 0.0

    def test_array_form(self):
        got = soft_threshold(np.array([3.0, -3.0, 0.2]), 1.0)
        assert np.array_equal(got, [2.0, -2.0, 0.0])

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold(1.0, -0.1)


class TestLassoCd:
    def test_null_threshold_gives_zero(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((30, 5))
        y = rng.standard_normal(30)
        lam = np.max(np.abs(x.T @ y / 30)) * 1.0001
        res = lasso_cd(x, y, lam)
        assert np.array_equal(res.coefficients, np.zeros(5))
        assert res.converged

    def test_orthogonal_closed_form(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            n, q = 64, 6
            x = orthogonal_design(rng, n, q)
            y = rng.standard_normal(n)
            lam = 0.15
            res = lasso_cd(x, y, lam)
            expect = soft_threshold(x.T @ y / n, lam)
            assert np.allclose(res.coefficients, expect, atol=1e-8)

    def test_small_lambda_approaches_ols(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((60, 4))
        y = rng.standard_normal(60)
        res = lasso_cd(x, y, 1e-9)
        assert np.allclose(res.coefficients, ols_oracle(x, y), atol=1e-6)

    def test_kkt_residual_small_on_convergence(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((50, 8))
        y = rng.standard_normal(50)
        res = lasso_cd(x, y, 0.1)
        assert res.converged
        assert res.kkt_residual <= 0.1 * 1e-6

    def test_objective_monotone(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((40, 12))
        y = rng.standard_normal(40)
        res = lasso_cd(x, y, 0.05)
        diffs = np.diff(res.objective_path)
        assert np.all(diffs <= 1e-12)

    def test_warm_start_not_worse(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((40, 10))
        y = rng.standard_normal(40)
        prev = lasso_cd(x, y, 0.2).coefficients
        cold = lasso_cd(x, y, 0.1)
        warm = lasso_cd(x, y, 0.1, warm=prev)
        assert warm.objective_path[-1] <= cold.objective_path[-1] + 1e-10

    def test_non_convergence_flagged(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((40, 20))
        y = rng.standard_normal(40)
        res = lasso_cd(x, y, 1e-6, max_iter=1)
        assert not res.converged
        assert res.iterations == 1

    def test_modes_agree(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((35, 9))
        y = rng.standard_normal(35)
        a = lasso_cd(x, y, 0.08, mode="gram").coefficients
        b = lasso_cd(x, y, 0.08, mode="naive").coefficients
        assert np.allclose(a, b, atol=1e-9)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError):
            lasso_cd(np.ones((3, 2)), np.ones(3), 0.0)


class TestOrthonormalize:
    def test_orthonormal_fixed_point(self):
        rng = np.random.default_rng(14)
        q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        assert np.allclose(orthonormalize(q, 0.0), q, atol=1e-10)

    def test_single_column_normalizes(self):
        v = np.array([3.0, 4.0])
        assert np.allclose(orthonormalize(v, 0.0).ravel(), v / 5.0, atol=1e-12)

    def test_random_full_rank(self):
        rng = np.random.default_rng(15)
        a = rng.standard_normal((6, 2))
        q = orthonormalize(a, 0.0)
        assert np.linalg.norm(q.T @ q - np.eye(2)) <= 1e-8
        assert np.linalg.norm(q @ (q.T @ a) - a) <= 1e-8

    def test_idempotent(self):
        rng = np.random.default_rng(16)
        a = rng.standard_normal((5, 3))
        q1 = orthonormalize(a, 0.0)
        q2 = orthonormalize(q1, 0.0)
        assert np.allclose(q1, q2, atol=1e-8)

    def test_singular_raises_then_ridge_works(self):
        col = np.array([1.0, 2.0, 3.0])
        a = np.column_stack([col, col])
        with pytest.raises(SingularMatrixError):
            orthonormalize(a, 0.0)
        q = orthonormalize(a, 1.0 / 3.0)
        assert np.all(np.isfinite(q))
