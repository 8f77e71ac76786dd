"""Inner solvers shared by every fit: OLS, l1 coordinate descent, and
nearest-orthonormal projection.

The lasso objective throughout is

    (1/2n) ||y - X a||^2 + lam * ||a||_1

and coordinate descent visits coordinates in fixed ascending order so runs
are reproducible.  For moderate column counts (q <= 4096) the solver works
from the precomputed Gram matrix and keeps the gradient up to date after
every coordinate move ("covariance updates"); above that it updates the
residual vector instead.  Both kernels are compiled with numba; a pure
numpy path is used if numba is unavailable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numpy.linalg import LinAlgError

from .linalg import SingularMatrixError, as_f64, sym_inv_sqrt

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


COV_UPDATE_MAX_COLS = 4096
DEFAULT_CD_TOL = 1e-7
DEFAULT_CD_MAX_ITER = 10000
DEFAULT_KKT_TOL = 1e-6


class RankDeficiencyError(LinAlgError):
    """Gram matrix numerically singular at ridge zero."""


@dataclass
class LassoResult:
    """Coordinate-descent solution with its convergence evidence.

    ``kkt_residual`` is the largest violation of the stationarity
    conditions: |g_j| - lam on inactive coordinates and
    |g_j + lam * sign(a_j)| on active ones, with
    g = (1/n) X^T (X a - y).  ``objective_path`` holds the objective value
    at the end of every sweep.
    """

    coefficients: np.ndarray
    iterations: int
    kkt_residual: float
    converged: bool
    objective_path: np.ndarray


def soft_threshold(z, t):
    """sign(z) * max(|z| - t, 0); accepts scalars or arrays, t >= 0."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def ols(design, y, ridge: float = 0.0) -> np.ndarray:
    """Minimize (1/2n)||y - X b||^2 + (ridge/2)||b||^2.

    Solved by Cholesky on the Gram matrix, upgraded to pivoted-QR least
    squares if the factorization fails with a positive ridge.  At ridge
    zero a reciprocal condition estimate below 1e-12 raises
    RankDeficiencyError suggesting a ridge.
    """
    x = as_f64(design)
    y = as_f64(y).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("design/response shapes disagree")
    if ridge < 0.0:
        raise ValueError("ridge must be nonnegative")
    n, q = x.shape
    if n < 1:
        raise ValueError("need at least one sample")
    gram = (x.T @ x) / n
    if ridge:
        gram = gram + ridge * np.eye(q)
    rhs = (x.T @ y) / n
    try:
        cf = sla.cho_factor(gram, check_finite=False)
    except LinAlgError:
        if ridge == 0.0:
            raise RankDeficiencyError(
                "Gram matrix is singular at ridge 0; pass a positive ridge "
                "(e.g. 1/n) or add samples"
            ) from None
        coef, *_ = sla.lstsq(gram, rhs, lapack_driver="gelsy", check_finite=False)
        return coef
    if ridge == 0.0:
        anorm = np.linalg.norm(gram, 1)
        rcond, info = sla.lapack.dpocon(cf[0], anorm, uplo=b"L" if cf[1] else b"U")
        if info == 0 and rcond < 1e-12:
            raise RankDeficiencyError(
                f"Gram matrix condition estimate {1.0 / max(rcond, 1e-300):.2e} "
                "exceeds 1e12 at ridge 0; pass a positive ridge (e.g. 1/n)"
            )
    return sla.cho_solve(cf, rhs, check_finite=False)


@njit(cache=True)
def _cd_gram_kernel(gram, cty, lam, a, yty_n, tol, kkt_tol, max_iter, objs):
    q = gram.shape[0]
    g = gram @ a
    sweeps = 0
    kkt = np.inf
    converged = False
    for sweep in range(max_iter):
        max_delta = 0.0
        for j in range(q):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = cty[j] - g[j] + gjj * a[j]
            z = abs(rho) - lam
            if z > 0.0:
                aj = z / gjj if rho > 0.0 else -z / gjj
            else:
                aj = 0.0
            d = aj - a[j]
            if d != 0.0:
                a[j] = aj
                for k in range(q):
                    g[k] += gram[j, k] * d
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
        quad = 0.0
        lin = 0.0
        l1 = 0.0
        for j in range(q):
            quad += a[j] * g[j]
            lin += cty[j] * a[j]
            l1 += abs(a[j])
        objs[sweep] = 0.5 * quad - lin + 0.5 * yty_n + lam * l1
        sweeps = sweep + 1
        if max_delta <= tol:
            kkt = 0.0
            for j in range(q):
                grad = g[j] - cty[j]
                if a[j] == 0.0:
                    v = abs(grad) - lam
                elif a[j] > 0.0:
                    v = abs(grad + lam)
                else:
                    v = abs(grad - lam)
                if v > kkt:
                    kkt = v
            if kkt <= lam * kkt_tol:
                converged = True
                break
    if kkt == np.inf:
        kkt = 0.0
        g = gram @ a
        for j in range(q):
            grad = g[j] - cty[j]
            if a[j] == 0.0:
                v = abs(grad) - lam
            elif a[j] > 0.0:
                v = abs(grad + lam)
            else:
                v = abs(grad - lam)
            if v > kkt:
                kkt = v
    if kkt < 0.0:
        kkt = 0.0
    return sweeps, kkt, converged


@njit(cache=True)
def _cd_naive_kernel(x, y, lam, a, tol, kkt_tol, max_iter, objs):
    n, q = x.shape
    r = y - x @ a
    col_sq = np.empty(q)
    for j in range(q):
        s = 0.0
        for i in range(n):
            s += x[i, j] * x[i, j]
        col_sq[j] = s / n
    sweeps = 0
    kkt = np.inf
    converged = False
    for sweep in range(max_iter):
        max_delta = 0.0
        for j in range(q):
            if col_sq[j] <= 0.0:
                continue
            dot = 0.0
            for i in range(n):
                dot += x[i, j] * r[i]
            rho = dot / n + col_sq[j] * a[j]
            z = abs(rho) - lam
            if z > 0.0:
                aj = z / col_sq[j] if rho > 0.0 else -z / col_sq[j]
            else:
                aj = 0.0
            d = aj - a[j]
            if d != 0.0:
                a[j] = aj
                for i in range(n):
                    r[i] -= x[i, j] * d
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
        rss = 0.0
        l1 = 0.0
        for i in range(n):
            rss += r[i] * r[i]
        for j in range(q):
            l1 += abs(a[j])
        objs[sweep] = 0.5 * rss / n + lam * l1
        sweeps = sweep + 1
        if max_delta <= tol:
            kkt = 0.0
            for j in range(q):
                dot = 0.0
                for i in range(n):
                    dot += x[i, j] * r[i]
                grad = -dot / n
                if a[j] == 0.0:
                    v = abs(grad) - lam
                elif a[j] > 0.0:
                    v = abs(grad + lam)
                else:
                    v = abs(grad - lam)
                if v > kkt:
                    kkt = v
            if kkt <= lam * kkt_tol:
                converged = True
                break
    if kkt == np.inf:
        kkt = 0.0
        for j in range(q):
            dot = 0.0
            for i in range(n):
                dot += x[i, j] * r[i]
            grad = -dot / n
            if a[j] == 0.0:
                v = abs(grad) - lam
            elif a[j] > 0.0:
                v = abs(grad + lam)
            else:
                v = abs(grad - lam)
            if v > kkt:
                kkt = v
    if kkt < 0.0:
        kkt = 0.0
    return sweeps, kkt, converged


def lasso_cd(
    design,
    y,
    lam: float,
    warm=None,
    tol: float = DEFAULT_CD_TOL,
    max_iter: int = DEFAULT_CD_MAX_ITER,
    kkt_tol: float = DEFAULT_KKT_TOL,
    mode: str = "auto",
) -> LassoResult:
    """Coordinate-descent lasso solve; see module docstring for the objective.

    ``mode`` is "auto" (Gram updates up to 4096 columns, residual updates
    beyond), "gram", or "naive".  The warm start, when given, is copied.
    Convergence requires both the largest coordinate move of a sweep to
    drop to ``tol`` and the KKT residual to reach ``lam * kkt_tol``; if the
    sweep budget runs out first, the best iterate is returned flagged
    non-converged.
    """
    x = as_f64(design)
    y = as_f64(y).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("design/response shapes disagree")
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    n, q = x.shape
    if warm is None:
        a = np.zeros(q)
    else:
        a = as_f64(warm).ravel().copy()
        if a.size != q:
            raise ValueError("warm start has wrong length")
    if mode == "auto":
        mode = "gram" if q <= COV_UPDATE_MAX_COLS else "naive"
    if mode not in ("gram", "naive"):
        raise ValueError(f"unknown mode {mode!r}")
    objs = np.empty(max_iter)
    if mode == "gram":
        gram = (x.T @ x) / n
        cty = (x.T @ y) / n
        yty_n = float(y @ y) / n
        sweeps, kkt, conv = _cd_gram_kernel(
            gram, cty, lam, a, yty_n, tol, kkt_tol, max_iter, objs
        )
    else:
        sweeps, kkt, conv = _cd_naive_kernel(x, y, lam, a, tol, kkt_tol, max_iter, objs)
    return LassoResult(
        coefficients=a,
        iterations=int(sweeps),
        kkt_residual=float(kkt),
        converged=bool(conv),
        objective_path=objs[:sweeps].copy(),
    )


def orthonormalize(a_tilde, eta: float = 0.0) -> np.ndarray:
    """Project onto the nearest matrix with orthonormal columns.

    Returns A (A^T A + eta I)^(-1/2).  With eta = 0 and full column rank
    the output Q satisfies Q^T Q = I and spans the same column space;
    a singular A^T A at eta = 0 raises SingularMatrixError, and callers
    retry with eta = 1/n.
    """
    a = as_f64(a_tilde)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[1] < 1:
        raise ValueError("expected a matrix with at least one column")
    m = sym_inv_sqrt(a.T @ a, eta)
    return a @ m


__all__ = [
    "LassoResult",
    "RankDeficiencyError",
    "SingularMatrixError",
    "lasso_cd",
    "ols",
    "orthonormalize",
    "soft_threshold",
]
