"""Nonlinear SKPD: a two-layer non-overlapping convolutional predictor.

The response is modeled as y = sum_r <A_r, g(X * B_r)> where * is the
non-overlapped convolution, B_r are R small filters, A_r are map
coefficients on the block grid constrained to unit Frobenius norm, and g
is an entrywise activation.  With the identity activation this reduces
exactly to the linear multi-term model.

Training is proximal gradient descent with analytic gradients: a gradient
step on (A_r, B_r), entrywise soft-thresholding of each vec(A_r) with
threshold step * lam, then renormalization of each A_r to unit norm.  The
default full-batch mode backtracks on the penalized objective so it never
increases; the minibatch configuration (batch 32, step 0.02, decay 0.98
every 10 epochs) is available through TrainConfig for benchmark parity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import KpdShape, as_f64, unvec
from .linear import Dataset, DegenerateDataError, init_location
from .rearrange import nonoverlap_conv
from .rng import FILTER_INIT_STREAM, CounterRng
from .solvers import soft_threshold

ACTIVATION_KINDS = ("identity", "relu", "sigmoid")


class DivergenceError(RuntimeError):
    """Training objective blew up; carries the objective history."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = list(history)


@dataclass(frozen=True)
class Activation:
    """Entrywise activation; the ReLU derivative at 0 is taken as 0."""

    kind: str

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")

    def g(self, v):
        if self.kind == "identity":
            return np.asarray(v, dtype=np.float64)
        if self.kind == "relu":
            return np.maximum(v, 0.0)
        return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=np.float64)))

    def gprime(self, v):
        if self.kind == "identity":
            return np.ones_like(np.asarray(v, dtype=np.float64))
        if self.kind == "relu":
            return (np.asarray(v) > 0.0).astype(np.float64)
        s = self.g(v)
        return s * (1.0 - s)


@dataclass
class TrainConfig:
    """Optimizer settings; ``batch=0`` means full-batch with backtracking.

    ``init`` selects the starting point: "linear" seeds the filters and
    maps from the greedy linear fit with a per-term sign search (the ReLU
    breaks the (a, b) -> (-a, -b) symmetry, and a filter that starts
    anti-correlated with its block pattern is a dead unit for a
    deterministic optimizer); "random" is seeded normal filters scaled by
    1/sqrt(prod d) with maps from the linear initialization columns.
    """

    step_size: float = 0.05
    epochs: int = 300
    lam: float = 0.01
    batch: int = 0
    seed: int = 0
    backtracking: bool = True
    lr_decay: float = 1.0
    decay_every: int = 0
    divergence_factor: float = 1e3
    init: str = "linear"

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if self.init not in ("linear", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class NonlinearModel:
    """R filters (rows of ``filters``) and R unit-norm maps (rows of ``maps``)."""

    filters: np.ndarray
    maps: np.ndarray
    activation: Activation
    shape: KpdShape
    loss_path: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.filters.shape[0]

    def filter_image(self, r: int) -> np.ndarray:
        return unvec(self.filters[r], self.shape.block_dims)

    def map_image(self, r: int) -> np.ndarray:
        return unvec(self.maps[r], self.shape.grid_dims)

    def coefficient_pattern(self) -> np.ndarray:
        """sum_r A_r (x) B_r; carries the detected region, not a regression
        coefficient (the nonlinear model has no Kronecker coefficient)."""
        from .linalg import kron

        out = np.zeros(self.shape.image_dims)
        for r in range(self.rank):
            out += kron(self.map_image(r), self.filter_image(r))
        return out


def predict(model: NonlinearModel, x) -> float:
    """Predicted response for one raw image."""
    x = as_f64(x)
    if tuple(x.shape) != model.shape.image_dims:
        raise ValueError(f"image dims {x.shape} != {model.shape.image_dims}")
    total = 0.0
    for r in range(model.rank):
        fmap = model.activation.g(nonoverlap_conv(x, model.filter_image(r)))
        total += float(np.sum(model.map_image(r) * fmap))
    return total


def _forward(maps, filters, act: Activation, xr):
    """Pre-activations (n, P, R) and fitted responses for stacked designs."""
    pre = np.tensordot(xr, filters, axes=([2], [1]))
    feat = act.g(pre)
    yhat = np.einsum("npr,rp->n", feat, maps)
    return pre, feat, yhat


def predict_dataset(model: NonlinearModel, dataset: Dataset) -> np.ndarray:
    if dataset.shape != model.shape:
        raise ValueError("model and dataset block shapes disagree")
    _, _, yhat = _forward(model.maps, model.filters, model.activation, dataset.xr)
    return yhat


def loss_grad(model: NonlinearModel, dataset: Dataset, lam: float = 0.0):
    """Squared loss (1/2n) sum (y - yhat)^2 and its analytic gradients.

    The l1 penalty is handled by the proximal step, not the gradient.
    Returns (loss, grad_maps, grad_filters) with grads shaped like the
    model arrays.
    """
    loss, gm, gf = _loss_grad_arrays(
        model.maps, model.filters, model.activation, dataset.xr, dataset.y
    )
    return loss, gm, gf


def _loss_grad_arrays(maps, filters, act, xr, y):
    n = y.size
    pre, feat, yhat = _forward(maps, filters, act, xr)
    resid = y - yhat
    loss = float(resid @ resid) / (2.0 * n)
    grad_maps = -np.einsum("n,npr->rp", resid, feat) / n
    weighted = act.gprime(pre) * maps.T[None, :, :] * resid[:, None, None]
    grad_filters = -np.einsum("npr,npq->rq", weighted, xr) / n
    return loss, grad_maps, grad_filters


def _objective(maps, filters, act, xr, y, lam):
    _, _, yhat = _forward(maps, filters, act, xr)
    resid = y - yhat
    return float(resid @ resid) / (2.0 * y.size) + lam * float(np.sum(np.abs(maps)))


def _initial_point(dataset: Dataset, rank, activation, cfg):
    n, p, q = dataset.xr.shape
    if cfg.init == "random" or not np.any(dataset.y):
        rng = CounterRng(cfg.seed, FILTER_INIT_STREAM)
        filters = rng.normal((rank, q)) / np.sqrt(q)
        try:
            maps = init_location(dataset, rank).T.copy()
        except DegenerateDataError:
            maps = np.zeros((rank, p))
        return maps, filters

    from .linear import deflation_terms

    abar, bbar = deflation_terms(dataset, rank)
    maps = abar.T.copy()
    filters = bbar.T.copy()
    for r in range(rank):
        norm = np.linalg.norm(maps[r])
        if norm > 0.0:
            maps[r] /= norm
        if not np.any(filters[r]):
            rng = CounterRng(cfg.seed, FILTER_INIT_STREAM)
            filters[r] = rng.normal(q) / np.sqrt(q)
    # Per-term sign search: (a, b) and (-a, -b) fit identically through the
    # linear model but not through the activation.
    for r in range(rank):
        base = _objective(maps, filters, activation, dataset.xr, dataset.y, 0.0)
        maps[r] *= -1.0
        filters[r] *= -1.0
        flipped = _objective(maps, filters, activation, dataset.xr, dataset.y, 0.0)
        if flipped >= base:
            maps[r] *= -1.0
            filters[r] *= -1.0
    return maps, filters


def _prox_maps(maps, thresh):
    out = soft_threshold(maps, thresh)
    norms = np.linalg.norm(out, axis=1)
    for r in range(out.shape[0]):
        if norms[r] > 0.0:
            out[r] /= norms[r]
    return out


def fit_nonlinear(
    dataset: Dataset,
    rank: int,
    activation: Activation | str,
    config: TrainConfig | None = None,
) -> NonlinearModel:
    """Train the predictor by proximal gradient descent.

    Filters start from a seeded normal draw scaled by 1/sqrt(prod d); maps
    start from the linear initialization columns.  Raises DivergenceError
    when the objective exceeds ``divergence_factor`` times its initial
    value.
    """
    if isinstance(activation, str):
        activation = Activation(activation)
    cfg = config or TrainConfig()
    if rank < 1:
        raise ValueError("rank must be >= 1")
    n, p, q = dataset.xr.shape
    xr, y = dataset.xr, dataset.y

    maps, filters = _initial_point(dataset, rank, activation, cfg)

    step = cfg.step_size
    lam = cfg.lam
    history = [_objective(maps, filters, activation, xr, y, lam)]
    initial = max(history[0], 1e-300)

    if cfg.batch and cfg.batch > 0:
        batch = min(cfg.batch, n)
        for epoch in range(cfg.epochs):
            order = CounterRng(cfg.seed, epoch).permutation(n)
            for start in range(0, n, batch):
                idx = order[start : start + batch]
                _, gm, gf = _loss_grad_arrays(
                    maps, filters, activation, xr[idx], y[idx]
                )
                maps = _prox_maps(maps - step * gm, step * lam)
                filters = filters - step * gf
            history.append(_objective(maps, filters, activation, xr, y, lam))
            if history[-1] > cfg.divergence_factor * initial:
                raise DivergenceError(
                    f"objective {history[-1]:.3e} exceeded "
                    f"{cfg.divergence_factor:g} x initial", history
                )
            if cfg.decay_every and (epoch + 1) % cfg.decay_every == 0:
                step *= cfg.lr_decay
    else:
        current = history[0]
        for epoch in range(cfg.epochs):
            _, gm, gf = _loss_grad_arrays(maps, filters, activation, xr, y)
            accepted = False
            trial = step
            for _ in range(40):
                maps_new = _prox_maps(maps - trial * gm, trial * lam)
                filters_new = filters - trial * gf
                cand = _objective(maps_new, filters_new, activation, xr, y, lam)
                if not cfg.backtracking or cand <= current + 1e-12:
                    accepted = True
                    break
                trial *= 0.5
            step = trial
            if accepted:
                maps, filters, current = maps_new, filters_new, cand
            history.append(current)
            if not accepted and step < 1e-15:
                break
            if current > cfg.divergence_factor * initial:
                raise DivergenceError(
                    f"objective {current:.3e} exceeded "
                    f"{cfg.divergence_factor:g} x initial", history
                )
            if cfg.decay_every and (epoch + 1) % cfg.decay_every == 0:
                step *= cfg.lr_decay

    return NonlinearModel(
        filters=filters, maps=maps, activation=activation,
        shape=dataset.shape, loss_path=history,
    )


__all__ = [
    "Activation",
    "DivergenceError",
    "NonlinearModel",
    "TrainConfig",
    "fit_nonlinear",
    "loss_grad",
    "predict",
    "predict_dataset",
]
