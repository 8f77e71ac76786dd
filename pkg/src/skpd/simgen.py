"""Synthetic signals and datasets for the benchmark studies.

Signals are binary masks times an intensity.  The canonical constructions
live on a 128x128 image (circles) or an 80x96x80 volume (balls); any
proportionally scaled variant is accepted, with radii scaled by the same
factor.  Circle and ball membership is squared distance from the block
center at ((d+1)/2, ...) in 1-based coordinates, boundary inclusive.

Images are i.i.d. standard normal.  Image i comes from the counter-based
stream (seed, i) and the response noise from the reserved noise stream, so
a dataset is fully determined by (signal, n, sigma, seed) and single
samples can be regenerated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .linalg import KpdShape, as_f64, kron, vec
from .linear import Dataset
from .nonlinear import Activation
from .rearrange import nonoverlap_conv, rearrange
from .rng import image_stream, noise_stream

SIGNAL_KINDS = (
    "one_circle",
    "three_circles",
    "butterfly",
    "one_ball",
    "two_balls",
    "custom_mask",
)

# Canonical geometry: (grid, 1-based block positions, radii at canonical size,
# canonical block edge).
_CIRCLE_GRID = (4, 4)
_ONE_CIRCLE = (((2, 3),), (15.0,), 32)
_THREE_CIRCLES = (((1, 1), (2, 3), (4, 2)), (4.0, 13.0, 7.0), 32)
_BALL_GRID = (5, 6, 5)
_ONE_BALL = (((3, 3, 3),), (6.0,), 16)
_TWO_BALLS = (((3, 3, 3), (1, 1, 3)), (6.0, 4.0), 16)


@dataclass
class SignalSpec:
    kind: str
    image_dims: tuple
    intensity: float = 1.0
    mask_file: str | None = None

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        self.image_dims = tuple(int(d) for d in self.image_dims)


@dataclass
class GeneratedStudy:
    """One synthetic study: truth, cached dataset, provenance."""

    c_true: np.ndarray
    dataset: Dataset
    raw_images: np.ndarray | None
    seed: int
    sigma: float


def _disk_mask(block_dims, radius: float) -> np.ndarray:
    """Boundary-inclusive ball mask centered at ((d+1)/2, ...) (1-based)."""
    grids = np.ogrid[tuple(slice(1, d + 1) for d in block_dims)]
    dist2 = sum((g - (d + 1) / 2.0) ** 2 for g, d in zip(grids, block_dims))
    return (dist2 <= radius * radius).astype(np.float64)


def _blocks_signal(image_dims, grid, positions, radii, canonical_block, intensity):
    if len(image_dims) != len(grid):
        raise ValueError(f"signal needs rank-{len(grid)} dims, got {image_dims}")
    blocks = []
    for d_img, g in zip(image_dims, grid):
        if d_img % g != 0:
            raise ValueError(f"image dims {image_dims} not divisible by grid {grid}")
        blocks.append(d_img // g)
    if len(set(blocks)) != 1:
        raise ValueError(f"dims {image_dims} are not a uniform scaling of the construction")
    edge = blocks[0]
    factor = edge / canonical_block
    out = np.zeros(image_dims)
    for pos, radius in zip(positions, radii):
        mask = _disk_mask((edge,) * len(grid), radius * factor)
        slices = tuple(
            slice((p - 1) * edge, p * edge) for p in pos
        )
        out[slices] = np.maximum(out[slices], mask)
    return out * intensity


def bundled_butterfly_path() -> str:
    """Path of the butterfly mask shipped with the package."""
    return str(resources.files("skpd").joinpath("data/butterfly_128.skt"))


def _load_mask(path, image_dims, intensity):
    from .io import skt_read

    mask = skt_read(path)
    if tuple(mask.shape) != tuple(image_dims):
        raise ValueError(
            f"mask {path} has dims {mask.shape}, expected {tuple(image_dims)}"
        )
    return (np.abs(mask) > 0).astype(np.float64) * intensity


def make_signal(spec: SignalSpec) -> np.ndarray:
    """Build the coefficient image of a signal spec."""
    kind = spec.kind
    if kind == "one_circle":
        pos, radii, canon = _ONE_CIRCLE
        return _blocks_signal(spec.image_dims, _CIRCLE_GRID, pos, radii, canon,
                              spec.intensity)
    if kind == "three_circles":
        pos, radii, canon = _THREE_CIRCLES
        return _blocks_signal(spec.image_dims, _CIRCLE_GRID, pos, radii, canon,
                              spec.intensity)
    if kind == "one_ball":
        pos, radii, canon = _ONE_BALL
        return _blocks_signal(spec.image_dims, _BALL_GRID, pos, radii, canon,
                              spec.intensity)
    if kind == "two_balls":
        pos, radii, canon = _TWO_BALLS
        return _blocks_signal(spec.image_dims, _BALL_GRID, pos, radii, canon,
                              spec.intensity)
    if kind == "butterfly":
        return _load_mask(spec.mask_file or bundled_butterfly_path(),
                          spec.image_dims, spec.intensity)
    if kind == "custom_mask":
        if not spec.mask_file:
            raise ValueError("custom_mask needs mask_file")
        return _load_mask(spec.mask_file, spec.image_dims, spec.intensity)
    raise ValueError(f"unknown signal kind {kind!r}")  # pragma: no cover


def signal_terms(spec: SignalSpec):
    """Kronecker terms (A_r, B_r) of a decomposable signal.

    Each location indicator holds a single block, so the term sum equals
    the mask exactly.  Butterfly and custom masks have no such
    decomposition and raise.
    """
    table = {
        "one_circle": (_CIRCLE_GRID, _ONE_CIRCLE),
        "three_circles": (_CIRCLE_GRID, _THREE_CIRCLES),
        "one_ball": (_BALL_GRID, _ONE_BALL),
        "two_balls": (_BALL_GRID, _TWO_BALLS),
    }
    if spec.kind not in table:
        raise ValueError(f"signal {spec.kind!r} has no Kronecker term decomposition")
    grid, (positions, radii, canon) = table[spec.kind]
    edge = spec.image_dims[0] // grid[0]
    factor = edge / canon
    a_terms, b_terms = [], []
    for pos, radius in zip(positions, radii):
        a = np.zeros(grid)
        a[tuple(p - 1 for p in pos)] = 1.0
        a_terms.append(a)
        b_terms.append(_disk_mask((edge,) * len(grid), radius * factor) * spec.intensity)
    return a_terms, b_terms


def draw_image(seed: int, index: int, dims) -> np.ndarray:
    """The ``index``-th standard-normal image of the study keyed by ``seed``."""
    return image_stream(seed, index).normal(tuple(dims))


def draw_noise(seed: int, n: int) -> np.ndarray:
    """The standard-normal response noise vector of the study."""
    return noise_stream(seed).normal(n)


def _default_blocks(ndim: int) -> tuple:
    return (8,) * ndim


def gen_dataset(
    c_true,
    n: int,
    sigma: float,
    seed: int,
    block_dims=None,
    retain_raw: bool = False,
) -> GeneratedStudy:
    """Simulate y_i = <X_i, C> + sigma * z_i with cached rearranged designs.

    ``block_dims`` sets the partition used by the fit (default 8 per axis);
    raw images are kept only on request (the nonlinear fit does not need
    them, but file export does).
    """
    c_true = as_f64(c_true)
    if n < 1 or sigma < 0.0:
        raise ValueError("need n >= 1 and sigma >= 0")
    shape = KpdShape(c_true.shape, block_dims or _default_blocks(c_true.ndim))
    c_flat = vec(c_true)
    xr = np.empty((n, shape.n_blocks, shape.block_size))
    y = np.empty(n)
    raw = np.empty((n,) + shape.image_dims) if retain_raw else None
    for i in range(n):
        x = draw_image(seed, i, shape.image_dims)
        y[i] = x.ravel() @ c_flat
        xr[i] = rearrange(x, shape)
        if retain_raw:
            raw[i] = x
    if sigma > 0.0:
        y = y + sigma * draw_noise(seed, n)
    return GeneratedStudy(
        c_true=c_true,
        dataset=Dataset(y=y, xr=xr, shape=shape),
        raw_images=raw,
        seed=seed,
        sigma=sigma,
    )


def gen_nonlinear_response(
    a_terms,
    b_terms,
    activation: Activation | str,
    n: int,
    sigma: float,
    seed: int,
    block_dims=None,
    retain_raw: bool = False,
) -> GeneratedStudy:
    """Simulate y_i = sum_r <A_r, g(X_i * B_r)> + sigma * z_i.

    Draws the same image and noise streams as :func:`gen_dataset`, so with
    the identity activation the responses are computed through the linear
    path with C = sum_r A_r (x) B_r and are bit-identical to it.
    """
    if isinstance(activation, str):
        activation = Activation(activation)
    a_terms = [as_f64(a) for a in a_terms]
    b_terms = [as_f64(b) for b in b_terms]
    if len(a_terms) != len(b_terms) or not a_terms:
        raise ValueError("need matching, nonempty term lists")
    c_region = np.zeros(np.multiply(a_terms[0].shape, b_terms[0].shape))
    for a, b in zip(a_terms, b_terms):
        c_region += kron(a, b)

    if activation.kind == "identity":
        return gen_nonlinear_identity(c_region, n, sigma, seed, block_dims, retain_raw)

    if n < 1 or sigma < 0.0:
        raise ValueError("need n >= 1 and sigma >= 0")
    image_dims = tuple(c_region.shape)
    shape = KpdShape(image_dims, block_dims or _default_blocks(c_region.ndim))
    xr = np.empty((n, shape.n_blocks, shape.block_size))
    y = np.empty(n)
    raw = np.empty((n,) + shape.image_dims) if retain_raw else None
    for i in range(n):
        x = draw_image(seed, i, image_dims)
        total = 0.0
        for a, b in zip(a_terms, b_terms):
            total += float(np.sum(a * activation.g(nonoverlap_conv(x, b))))
        y[i] = total
        xr[i] = rearrange(x, shape)
        if retain_raw:
            raw[i] = x
    if sigma > 0.0:
        y = y + sigma * draw_noise(seed, n)
    return GeneratedStudy(
        c_true=c_region,
        dataset=Dataset(y=y, xr=xr, shape=shape),
        raw_images=raw,
        seed=seed,
        sigma=sigma,
    )


def gen_nonlinear_identity(c_region, n, sigma, seed, block_dims, retain_raw):
    """Identity activation reduces to the linear model; share its code path."""
    return gen_dataset(c_region, n, sigma, seed, block_dims, retain_raw)
