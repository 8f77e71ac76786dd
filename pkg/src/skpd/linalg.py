"""Minimal dense numerical kernel.

Arrays are plain float64 numpy arrays of rank 1 to 4, always interpreted in
row-major (C) order; :func:`vec` and :func:`unvec` fix the single
vectorization convention used throughout the package, including inside
blocks, which is what makes the rearrangement operator map Kronecker
products to rank-1 matrices.

The truncated SVD used to initialize the estimators is a deterministic
power iteration with deflation on the smaller Gram matrix.  A dense
full-SVD oracle exists only in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.linalg import LinAlgError


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted; carries the achieved residual."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class SingularMatrixError(LinAlgError):
    """Matrix is numerically singular for the requested operation."""


class NonPsdError(LinAlgError):
    """Matrix has an eigenvalue meaningfully below zero."""


@dataclass(frozen=True)
class KpdShape:
    """Image dimensions plus the block partition used by the decomposition.

    ``image_dims`` are the full image dimensions (D1, D2[, D3]) and
    ``block_dims`` the dictionary-block dimensions (d1, d2[, d3]); each d
    must divide the matching D exactly, and the derived ``grid_dims`` are
    the per-axis block counts p = D / d.
    """

    image_dims: tuple
    block_dims: tuple
    grid_dims: tuple = field(init=False)

    def __post_init__(self):
        image = tuple(int(d) for d in self.image_dims)
        block = tuple(int(d) for d in self.block_dims)
        if len(image) not in (2, 3):
            raise ValueError(f"image rank must be 2 or 3, got {len(image)}")
        if len(block) != len(image):
            raise ValueError(
                f"block rank {len(block)} does not match image rank {len(image)}"
            )
        if any(d < 1 for d in image + block):
            raise ValueError("all dimensions must be >= 1")
        for ax, (big, small) in enumerate(zip(image, block)):
            if big % small != 0:
                raise ValueError(
                    f"block dim {small} does not divide image dim {big} on axis {ax}"
                )
        grid = tuple(big // small for big, small in zip(image, block))
        object.__setattr__(self, "image_dims", image)
        object.__setattr__(self, "block_dims", block)
        object.__setattr__(self, "grid_dims", grid)

    @property
    def ndim(self) -> int:
        return len(self.image_dims)

    @property
    def n_blocks(self) -> int:
        """Total block count, the length of a location-indicator vector."""
        return int(np.prod(self.grid_dims))

    @property
    def block_size(self) -> int:
        """Entries per block, the length of a dictionary vector."""
        return int(np.prod(self.block_dims))


def as_f64(a) -> np.ndarray:
    """View/convert ``a`` as a C-contiguous float64 array."""
    return np.ascontiguousarray(a, dtype=np.float64)


def vec(a) -> np.ndarray:
    """Row-major vectorization (last index fastest), any rank."""
    return as_f64(a).ravel()


def unvec(v, dims) -> np.ndarray:
    """Inverse of :func:`vec`; exact roundtrip.

    Raises ValueError when the length of ``v`` does not match ``dims``.
    """
    v = as_f64(v).ravel()
    dims = tuple(int(d) for d in dims)
    expect = int(np.prod(dims))
    if v.size != expect:
        raise ValueError(f"cannot unvec length {v.size} into dims {dims}")
    return v.reshape(dims)


def kron(a, b) -> np.ndarray:
    """Kronecker product of two arrays of equal rank 2 or 3.

    For rank 2 this is the usual block definition; for rank 3 each slice of
    the result along the last axis is the 2-D Kronecker product of the
    matching slices, with the last axis indexed block-wise exactly like the
    first two.  numpy's n-dimensional kron implements precisely this
    indexing, so we delegate after validating ranks.
    """
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ValueError(f"rank mismatch: {a.ndim} vs {b.ndim} (need equal rank 2 or 3)")
    return np.kron(a, b)


def _fix_sign(u: np.ndarray) -> np.ndarray:
    """Flip ``u`` so its largest-magnitude entry is positive (ties: lowest index)."""
    idx = int(np.argmax(np.abs(u)))
    if u[idx] < 0.0:
        return -u
    return u


def _orthogonalize_against(w, basis):
    for u in basis:
        w = w - (u @ w) * u
    return w


def top_left_singular(m, k: int, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Top-k left singular vectors of a dense matrix.

    Power iteration with deflation runs on the smaller of the two Gram
    matrices; when that is m^T m, left vectors are recovered through
    u = m v / sigma.  Columns come back orthonormal with a deterministic
    sign (largest-magnitude entry positive, ties resolved to the lowest
    index) so repeated initializations are reproducible.

    Raises ValueError for k out of range or non-finite input, and
    ConvergenceError (with the achieved residual) if a component fails to
    settle within ``max_iter`` sweeps.
    """
    m = as_f64(m)
    if m.ndim != 2:
        raise ValueError("expected a matrix")
    nrow, ncol = m.shape
    if not (1 <= k <= min(nrow, ncol)):
        raise ValueError(f"k={k} out of range for {nrow}x{ncol} matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")

    left_side = nrow <= ncol
    g = m @ m.T if left_side else m.T @ m
    g = 0.5 * (g + g.T)
    scale = float(np.trace(g))
    if scale == 0.0:
        raise ValueError("zero matrix has no singular directions")

    size = g.shape[0]
    basis: list[np.ndarray] = []
    gwork = g.copy()
    for _ in range(k):
        # Deterministic start: the dominant column of the deflated Gram.
        col_norms = np.linalg.norm(gwork, axis=0)
        j0 = int(np.argmax(col_norms))
        v = gwork[:, j0].copy()
        v = _orthogonalize_against(v, basis)
        nv = np.linalg.norm(v)
        if nv <= 1e-14 * max(1.0, scale):
            # Deflated matrix is numerically zero: the remaining singular
            # values vanish; complete with the first unit vector not yet in
            # the span.
            v = _complete_basis(size, basis)
        else:
            v = v / nv
            for it in range(max_iter):
                w = gwork @ v
                w = _orthogonalize_against(w, basis)
                theta = float(v @ w)
                res = np.linalg.norm(w - theta * v)
                nw = np.linalg.norm(w)
                if nw <= 1e-14 * max(1.0, scale):
                    # Eigenvalue collapsed to zero mid-iteration.
                    break
                v_new = w / nw
                if res <= tol * max(abs(theta), 1e-300):
                    v = v_new
                    break
                v = v_new
            else:
                raise ConvergenceError(
                    f"power iteration did not converge in {max_iter} sweeps "
                    f"(residual {res:.3e})",
                    residual=res,
                )
        theta = float(v @ (gwork @ v))
        gwork = gwork - theta * np.outer(v, v)
        basis.append(v)

    vs = np.column_stack(basis)
    if left_side:
        u = vs
    else:
        u = m @ vs
        for j in range(k):
            s = np.linalg.norm(u[:, j])
            if s <= 1e-14 * max(1.0, np.sqrt(scale)):
                u[:, j] = _complete_basis(nrow, [u[:, i] for i in range(j)])
            else:
                u[:, j] = u[:, j] / s
    # Clean up rounding drift, then settle signs (sign flips keep Q^T Q = I).
    u = _mgs(u)
    for j in range(k):
        u[:, j] = _fix_sign(u[:, j])
    return u


def _complete_basis(size, basis):
    for j in range(size):
        cand = np.zeros(size)
        cand[j] = 1.0
        cand = _orthogonalize_against(cand, basis)
        n = np.linalg.norm(cand)
        if n > 0.5:
            return cand / n
    raise ValueError("cannot complete orthonormal basis")


def _mgs(q: np.ndarray) -> np.ndarray:
    q = q.copy()
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        n = np.linalg.norm(q[:, j])
        if n > 0:
            q[:, j] /= n
    return q


def sym_inv_sqrt(s, ridge: float = 0.0) -> np.ndarray:
    """Inverse symmetric square root (s + ridge*I)^(-1/2) via eigendecomposition.

    The input must be symmetric to within 1e-10 (relative to its magnitude).
    Raises NonPsdError when an eigenvalue falls below -1e-8 after the ridge,
    and SingularMatrixError when the smallest eigenvalue is under 1e-12, in
    which case callers retry with a positive ridge.
    """
    s = as_f64(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("expected a square matrix")
    if ridge < 0.0:
        raise ValueError("ridge must be nonnegative")
    amax = max(1.0, float(np.max(np.abs(s))) if s.size else 1.0)
    if float(np.max(np.abs(s - s.T))) > 1e-10 * amax:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (s + s.T)
    if ridge:
        sym = sym + ridge * np.eye(s.shape[0])
    w, v = np.linalg.eigh(sym)
    if w[0] < -1e-8:
        raise NonPsdError(f"eigenvalue {w[0]:.3e} below -1e-8: input not PSD")
    if w[0] <= 1e-12:
        raise SingularMatrixError(
            f"smallest eigenvalue {w[0]:.3e} <= 1e-12: inverse square root unreliable"
        )
    m = (v * (1.0 / np.sqrt(w))) @ v.T
    return 0.5 * (m + m.T)
