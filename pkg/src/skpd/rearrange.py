"""Block rearrangement and non-overlapped convolution.

``rearrange`` maps an image partitioned into a p1 x p2 [x p3] grid of
d1 x d2 [x d3] blocks to a (prod p) x (prod d) matrix whose rows are the
row-major vectorizations of the blocks, enumerated with the last grid index
fastest.  Under this map a Kronecker product A (x) B becomes the rank-1
matrix vec(A) vec(B)^T, which turns the bilinear image-regression objective
into a plain matrix sensing problem; ``inverse_rearrange`` undoes the map
exactly so coefficient images can be reconstructed from their factors.

``nonoverlap_conv`` is the same operator seen as a stride-equals-filter
convolution: each output cell is the Frobenius inner product of one block
with the filter.
"""

from __future__ import annotations

import numpy as np

from .linalg import KpdShape, as_f64, unvec, vec


def _check_dims(arr: np.ndarray, shape: KpdShape):
    if tuple(arr.shape) != shape.image_dims:
        raise ValueError(f"array dims {arr.shape} do not match shape {shape.image_dims}")


def rearrange(c, shape: KpdShape) -> np.ndarray:
    """Stack block vectorizations of ``c`` into a (prod p) x (prod d) matrix."""
    c = as_f64(c)
    _check_dims(c, shape)
    if shape.ndim == 2:
        p1, p2 = shape.grid_dims
        d1, d2 = shape.block_dims
        blocks = c.reshape(p1, d1, p2, d2).transpose(0, 2, 1, 3)
        return np.ascontiguousarray(blocks.reshape(p1 * p2, d1 * d2))
    p1, p2, p3 = shape.grid_dims
    d1, d2, d3 = shape.block_dims
    blocks = c.reshape(p1, d1, p2, d2, p3, d3).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(blocks.reshape(p1 * p2 * p3, d1 * d2 * d3))


def inverse_rearrange(m, shape: KpdShape) -> np.ndarray:
    """Reassemble an image from its block-rearranged matrix; exact inverse."""
    m = as_f64(m)
    if m.shape != (shape.n_blocks, shape.block_size):
        raise ValueError(
            f"matrix dims {m.shape} do not match "
            f"({shape.n_blocks}, {shape.block_size}) for shape {shape.image_dims}"
        )
    if shape.ndim == 2:
        p1, p2 = shape.grid_dims
        d1, d2 = shape.block_dims
        blocks = m.reshape(p1, p2, d1, d2).transpose(0, 2, 1, 3)
        return np.ascontiguousarray(blocks.reshape(p1 * d1, p2 * d2))
    p1, p2, p3 = shape.grid_dims
    d1, d2, d3 = shape.block_dims
    blocks = m.reshape(p1, p2, p3, d1, d2, d3).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(blocks.reshape(p1 * d1, p2 * d2, p3 * d3))


def nonoverlap_conv(x, b) -> np.ndarray:
    """Convolve image ``x`` with filter ``b`` using stride equal to the filter.

    Output cell (j, k[, l]) is the Frobenius inner product of block
    (j, k[, l]) of ``x`` with ``b``; equivalently
    ``unvec(rearrange(x) @ vec(b), grid_dims)``, which is how it is
    computed so the two agree exactly.
    """
    x = as_f64(x)
    b = as_f64(b)
    if x.ndim != b.ndim:
        raise ValueError(f"rank mismatch: image {x.ndim} vs filter {b.ndim}")
    shape = KpdShape(x.shape, b.shape)
    return unvec(rearrange(x, shape) @ vec(b), shape.grid_dims)


def rearrange_batch(images, shape: KpdShape) -> np.ndarray:
    """Rearrange ``n`` stacked images into an (n, prod p, prod d) design array."""
    images = as_f64(images)
    if images.ndim != shape.ndim + 1:
        raise ValueError(
            f"expected stacked images of rank {shape.ndim + 1}, got {images.ndim}"
        )
    n = images.shape[0]
    out = np.empty((n, shape.n_blocks, shape.block_size))
    for i in range(n):
        out[i] = rearrange(images[i], shape)
    return out
