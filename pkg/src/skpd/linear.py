"""Linear SKPD estimators.

The coefficient image is modeled as C = sum_r A_r (x) B_r with sparse
location indicators A_r and dense dictionary blocks B_r.  After block
rearrangement the model is bilinear in (vec(A_r), vec(B_r)) and is fit by
path-following alternating minimization:

1. initialize the stacked location matrix with the top-R left singular
   vectors of sum_i Xr_i * y_i,
2. alternate an OLS update of the stacked dictionaries with a lasso update
   of the stacked locations, driving the penalty down a geometric schedule
   lam_t = lam0 * kappa^t * ||B_t||_F,
3. re-orthonormalize the location matrix after every lasso step (with a
   1/n ridge fallback when it loses rank).

The schedule runs T = ceil(log(lam_tgt) / log(kappa)) + t0_extra steps, or
stops early once the penalty has passed lam_tgt * ||B_t||_F and the
relative change of the reconstructed coefficient falls under ``conv_tol``.
The one-term fit is the R = 1 special case and shares the same loop, so
the two produce identical trajectories there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace

import numpy as np

from .linalg import (
    KpdShape,
    SingularMatrixError,
    _complete_basis,
    as_f64,
    top_left_singular,
    unvec,
)
from .rearrange import inverse_rearrange, rearrange, rearrange_batch
from .solvers import (
    DEFAULT_CD_MAX_ITER,
    DEFAULT_CD_TOL,
    RankDeficiencyError,
    lasso_cd,
    ols,
    orthonormalize,
)

ZERO_EPS = 1e-10


class DegenerateDataError(ValueError):
    """Response carries no usable signal for the requested operation."""


class OverPenalizedError(RuntimeError):
    """A lasso step zeroed every coordinate; records the offending penalty."""

    def __init__(self, lam, step):
        super().__init__(
            f"lasso at step {step} zeroed all location coordinates "
            f"(lambda={lam:.6g}); lower lambda0/lambda_tgt or check scaling"
        )
        self.lam = lam
        self.step = step


@dataclass
class Dataset:
    """Responses plus the cached block-rearranged designs.

    ``xr`` has shape (n, prod p, prod d); raw images are not retained on
    the solver path, every formula below consumes the rearranged designs.
    """

    y: np.ndarray
    xr: np.ndarray
    shape: KpdShape

    def __post_init__(self):
        self.y = as_f64(self.y).ravel()
        self.xr = as_f64(self.xr)
        expect = (self.y.size, self.shape.n_blocks, self.shape.block_size)
        if self.xr.shape != expect:
            raise ValueError(f"xr shape {self.xr.shape} does not match {expect}")
        if self.y.size < 1:
            raise ValueError("need at least one sample")

    @property
    def n(self) -> int:
        return self.y.size

    @classmethod
    def from_images(cls, images, y, block_dims) -> "Dataset":
        images = as_f64(images)
        shape = KpdShape(images.shape[1:], block_dims)
        return cls(y=y, xr=rearrange_batch(images, shape), shape=shape)


@dataclass
class FitConfig:
    """Knobs of the path-following fit.

    ``lambda0`` of None means the just-active start: lam0 is set so the
    first lasso sits a factor kappa below its null threshold.  ``lambda_tgt``
    is the target penalty in units of ||B||_F (the tuning grid spans
    0.4 to 2).  ``t0_extra`` extends the path beyond the nominal
    ceil(log lam_tgt / log kappa) steps; it absorbs the gap between the
    auto-normalized lambda0 and the unit scale the step-count formula
    assumes, and 14 puts the tuning grid on the useful part of the path.
    """

    lambda0: float | None = None
    kappa: float = 0.9
    lambda_tgt: float = 0.4
    t0_extra: int = 14
    ols_ridge: float = 0.0
    orth_ridge: float = 0.0
    cd_tol: float = DEFAULT_CD_TOL
    cd_max_iter: int = DEFAULT_CD_MAX_ITER
    conv_tol: float = 1e-4
    keep_iterates: bool = False

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0):
            raise ValueError("kappa must be in (0, 1)")
        if self.lambda_tgt <= 0.0:
            raise ValueError("lambda_tgt must be positive")
        if self.lambda0 is not None and self.lambda0 < self.lambda_tgt:
            raise ValueError("lambda_tgt must not exceed lambda0")


@dataclass
class PathTrace:
    """Per-iteration diagnostics of one fit."""

    lam: list = field(default_factory=list)
    b_norm: list = field(default_factory=list)
    a_nnz: list = field(default_factory=list)
    rss: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    lambda_final: float = 0.0
    lambda_target_value: float = 0.0
    degenerate: bool = False
    a_iterates: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.lam)


@dataclass
class OneTermModel:
    """Single location vector (unit norm) and dictionary vector."""

    a: np.ndarray
    b: np.ndarray
    shape: KpdShape

    def coefficients(self) -> np.ndarray:
        return coefficients(self)


@dataclass
class MultiTermModel:
    """Stacked location matrix (orthonormal columns) and dictionaries.

    Columns are ordered by decreasing dictionary norm ||b_r||_2.
    """

    abar: np.ndarray
    bbar: np.ndarray
    shape: KpdShape
    rank: int

    def coefficients(self) -> np.ndarray:
        return coefficients(self)


@dataclass
class LocalSmoothModel:
    """Block-mean lasso baseline: grid coefficients with the flat filter."""

    a: np.ndarray
    shape: KpdShape

    def coefficients(self) -> np.ndarray:
        q = self.shape.block_size
        return inverse_rearrange(np.outer(self.a, np.full(q, 1.0 / q)), self.shape)


def init_location(dataset: Dataset, rank: int = 1) -> np.ndarray:
    """Top-``rank`` left singular vectors of sum_i Xr_i y_i.

    Raises DegenerateDataError when the correlation matrix is identically
    zero (for instance an all-zero response).
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    corr = np.tensordot(dataset.y, dataset.xr, axes=(0, 0))
    if not np.any(corr):
        raise DegenerateDataError("sum_i Xr_i y_i is the zero matrix")
    return top_left_singular(corr, rank)


def _orthonormalize_step(atilde: np.ndarray, eta: float, n: int) -> np.ndarray:
    """Symmetric orthonormalization with a ridge retry and a degeneracy net.

    The just-active start of the penalty path can zero a whole column of
    the lasso iterate; the symmetric map keeps such columns at zero, which
    would make the next joint OLS singular.  When that happens, surviving
    columns are orthonormalized in order and dead ones completed with
    deterministic basis vectors, so the orthonormality invariant holds and
    the dropped term can re-enter at a smaller penalty.
    """
    q = None
    try:
        q = orthonormalize(atilde, eta)
    except SingularMatrixError:
        q = orthonormalize(atilde, 1.0 / n)
    if float(np.max(np.abs(q.T @ q - np.eye(q.shape[1])))) <= 1e-8:
        return q
    cols = []
    scale = max(float(np.max(np.abs(atilde))), 1e-300)
    for j in range(atilde.shape[1]):
        v = atilde[:, j].copy()
        for u in cols:
            v -= (u @ v) * u
        norm = float(np.linalg.norm(v))
        if norm > 1e-10 * scale:
            cols.append(v / norm)
        else:
            cols.append(_complete_basis(atilde.shape[0], cols))
    return np.column_stack(cols)


def _zero_model(shape: KpdShape, rank: int) -> tuple[MultiTermModel, PathTrace]:
    abar = np.zeros((shape.n_blocks, rank))
    abar[:rank, :] = np.eye(rank)
    trace = PathTrace(degenerate=True)
    model = MultiTermModel(abar=abar, bbar=np.zeros((shape.block_size, rank)),
                           shape=shape, rank=rank)
    return model, trace


def deflation_terms(
    dataset: Dataset, rank: int, config: FitConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy one-term fits on successive residuals; returns (abar, bbar).

    Each pass runs the one-term path on the current residual response and
    peels its fitted contribution off.  The columns are nested, so the
    first r columns initialize a rank-r fit.  A degenerate pass (nothing
    left to fit) contributes a completed basis direction with a zero
    dictionary.
    """
    cfg = config or FitConfig()
    # The greedy passes always run a full path of moderate depth; tying them
    # to the caller's lambda_tgt would make a short-path cell initialize
    # from a barely-started greedy fit.
    sub_cfg = dc_replace(cfg, lambda_tgt=min(0.4, cfg.lambda_tgt), lambda0=None,
                         keep_iterates=False)
    n, p, q = dataset.xr.shape
    resid = dataset.y.copy()
    acols: list[np.ndarray] = []
    bcols: list[np.ndarray] = []
    for _ in range(rank):
        sub = Dataset(y=resid, xr=dataset.xr, shape=dataset.shape)
        try:
            m1, _ = fit_multi_term(sub, 1, sub_cfg)
        except (DegenerateDataError, OverPenalizedError):
            acols.append(_complete_basis(p, acols))
            bcols.append(np.zeros(q))
            continue
        a1 = m1.abar[:, 0]
        b1 = m1.bbar[:, 0]
        resid = resid - (np.tensordot(dataset.xr, b1, axes=([2], [0])) @ a1)
        acols.append(a1)
        bcols.append(b1)
    return np.column_stack(acols), np.column_stack(bcols)


def deflation_init(dataset: Dataset, rank: int, config: FitConfig | None = None) -> np.ndarray:
    """Greedy location initialization for the joint R-term path.

    Used for R > 1: the SVD initialization is noise-dominated past the
    leading term at benchmark sample sizes, and a term whose dictionary
    starts at noise never activates on the joint path.
    """
    return deflation_terms(dataset, rank, config)[0]


def fit_multi_term(
    dataset: Dataset,
    rank: int,
    config: FitConfig | None = None,
    init_abar=None,
) -> tuple[MultiTermModel, PathTrace]:
    """Alternating minimization for the R-term decomposition.

    For R = 1 the full penalty path runs from its just-active start.  For
    R > 1 the locations are initialized by greedy deflation (or by
    ``init_abar``, e.g. a warm start from a tuning sweep) and the joint
    alternation runs the last ``t0_extra`` steps of the schedule: the
    high-penalty head of the path would wipe out the weaker initialized
    terms, while the tail polishes all terms jointly and ends at the same
    target penalty either way.  Returns the model with columns reordered
    by decreasing ||b_r||_2 (the reorder happens only at return, never
    mid-path) plus the iteration trace.
    """
    cfg = config or FitConfig()
    if rank < 1:
        raise ValueError("rank must be >= 1")
    n, p, q = dataset.xr.shape
    if cfg.ols_ridge == 0.0 and n <= rank * q:
        raise RankDeficiencyError(
            f"n={n} <= rank*block_size={rank * q}: joint OLS is rank deficient; "
            "pass ols_ridge > 0 (e.g. 1/n) or reduce the rank/block size"
        )

    if not np.any(dataset.y):
        return _zero_model(dataset.shape, rank)

    refine_only = rank > 1
    if init_abar is None:
        if rank == 1:
            abar = init_location(dataset, rank)
        else:
            abar = deflation_init(dataset, rank, cfg)
            abar = _orthonormalize_step(abar, cfg.orth_ridge, n)
    else:
        abar = as_f64(init_abar)
        if abar.ndim == 1:
            abar = abar[:, None]
        if abar.shape != (p, rank):
            raise ValueError(f"init_abar shape {abar.shape} != ({p}, {rank})")
        abar = _orthonormalize_step(abar, cfg.orth_ridge, n)

    lam0 = cfg.lambda0
    total = max(1, math.ceil(math.log(cfg.lambda_tgt) / math.log(cfg.kappa)) + cfg.t0_extra)
    start = max(1, total - cfg.t0_extra + 1) if refine_only else 1
    trace = PathTrace()
    atilde_prev = abar.ravel()
    chat_prev = None
    lam_t = 0.0
    bnorm = 0.0

    for t in range(start, total + 1):
        # Dictionary step: joint OLS over the stacked R * prod(d) coefficients.
        design_b = np.tensordot(dataset.xr, abar, axes=([1], [0])).reshape(n, q * rank)
        bvec = ols(design_b, dataset.y, cfg.ols_ridge)
        bbar = bvec.reshape(q, rank)
        bnorm = float(np.linalg.norm(bbar))
        if bnorm == 0.0:
            raise DegenerateDataError("dictionary update collapsed to zero")

        # Location step: lasso over the stacked R * prod(p) coefficients.
        design_a = np.tensordot(dataset.xr, bbar, axes=([2], [0])).reshape(n, p * rank)
        if lam0 is None:
            # Just-active start for the WEAKEST term: the per-term null levels
            # differ by the dictionary strengths, and anchoring on the maximum
            # would keep weak terms at zero through the whole path.
            corr = np.abs(design_a.T @ dataset.y).reshape(p, rank) / n
            null_level = float(corr.max(axis=0).min())
            if null_level == 0.0:
                raise DegenerateDataError("response is orthogonal to every design column")
            lam0 = null_level / bnorm
        lam_t = lam0 * cfg.kappa**t * bnorm
        res = lasso_cd(
            design_a,
            dataset.y,
            lam_t,
            warm=atilde_prev,
            tol=cfg.cd_tol,
            max_iter=cfg.cd_max_iter,
        )
        atilde = res.coefficients.reshape(p, rank)
        nnz = int(np.count_nonzero(atilde))
        if nnz == 0:
            raise OverPenalizedError(lam_t, t)
        atilde_prev = res.coefficients

        abar = _orthonormalize_step(atilde, cfg.orth_ridge, n)

        chat = abar @ bbar.T
        fitted = design_a @ abar.ravel()
        rss = float(np.sum((dataset.y - fitted) ** 2))
        if chat_prev is None:
            rel = np.inf
        else:
            denom = max(float(np.linalg.norm(chat_prev)), ZERO_EPS)
            rel = float(np.linalg.norm(chat - chat_prev)) / denom
        chat_prev = chat

        trace.lam.append(lam_t)
        trace.b_norm.append(bnorm)
        trace.a_nnz.append(nnz)
        trace.rss.append(rss)
        trace.rel_change.append(rel)
        if cfg.keep_iterates:
            trace.a_iterates.append(abar.copy())

        if lam0 * cfg.kappa**t <= cfg.lambda_tgt and rel < cfg.conv_tol:
            break

    trace.lambda_final = lam_t
    trace.lambda_target_value = cfg.lambda_tgt * bnorm

    order = np.argsort(-np.linalg.norm(bbar, axis=0), kind="stable")
    model = MultiTermModel(
        abar=np.ascontiguousarray(abar[:, order]),
        bbar=np.ascontiguousarray(bbar[:, order]),
        shape=dataset.shape,
        rank=rank,
    )
    return model, trace


def fit_one_term(
    dataset: Dataset, config: FitConfig | None = None
) -> tuple[OneTermModel, PathTrace]:
    """Alternating minimization for the one-term decomposition (R = 1)."""
    model, trace = fit_multi_term(dataset, 1, config)
    one = OneTermModel(a=model.abar[:, 0].copy(), b=model.bbar[:, 0].copy(),
                       shape=model.shape)
    return one, trace


def _factors(model) -> tuple[np.ndarray, np.ndarray, KpdShape]:
    if isinstance(model, OneTermModel):
        return model.a[:, None], model.b[:, None], model.shape
    if isinstance(model, MultiTermModel):
        return model.abar, model.bbar, model.shape
    if isinstance(model, LocalSmoothModel):
        q = model.shape.block_size
        return model.a[:, None], np.full((q, 1), 1.0 / q), model.shape
    raise TypeError(f"unsupported model type {type(model).__name__}")


def coefficients(model) -> np.ndarray:
    """Reconstruct the coefficient image sum_r A_r (x) B_r."""
    abar, bbar, shape = _factors(model)
    return inverse_rearrange(abar @ bbar.T, shape)


def predict(model, dataset: Dataset) -> np.ndarray:
    """Fitted responses <X_i, C_hat> computed through the rearranged designs."""
    abar, bbar, shape = _factors(model)
    if shape.image_dims != dataset.shape.image_dims:
        raise ValueError("model and dataset image dims disagree")
    chat_r = rearrange(coefficients(model), dataset.shape)
    return dataset.xr.reshape(dataset.n, -1) @ chat_r.ravel()


def threshold_level(c: float, n: int, shape: KpdShape) -> float:
    """Hard-threshold level c * sqrt((log n + prod(d) log prod(p)) / n)."""
    if c <= 0.0:
        raise ValueError("c must be positive")
    q = shape.block_size
    p = shape.n_blocks
    return c * math.sqrt((math.log(n) + q * math.log(p)) / n)


def hard_threshold(model, c: float, n: int):
    """Zero location entries at or below the theory threshold.

    Location columns are not renormalized afterwards; the surviving sign
    pattern is the object of interest.  Returns a new model of the same
    type.
    """
    abar, bbar, shape = _factors(model)
    level = threshold_level(c, n, shape)
    kept = np.where(np.abs(abar) > level, abar, 0.0)
    if isinstance(model, OneTermModel):
        return OneTermModel(a=kept[:, 0], b=model.b.copy(), shape=shape)
    return MultiTermModel(abar=kept, bbar=bbar.copy(), shape=shape, rank=model.rank)


def region_mask(c_hat, zero_eps: float = ZERO_EPS) -> np.ndarray:
    """Boolean detection mask: entries of |C_hat| above ``zero_eps``."""
    return np.abs(as_f64(c_hat)) > zero_eps


def fit_local_smoothing_model(dataset: Dataset, lam: float) -> LocalSmoothModel:
    """Lasso of y on the block means; the persistable form of the baseline."""
    z = dataset.xr.mean(axis=2)
    res = lasso_cd(z, dataset.y, lam)
    return LocalSmoothModel(a=res.coefficients, shape=dataset.shape)


def fit_local_smoothing(dataset: Dataset, lam: float) -> np.ndarray:
    """Block-averaging baseline: lasso of y on the block means.

    Equivalent to a one-term fit with the dictionary frozen to the flat
    filter 1/prod(d); returns the reconstructed coefficient image
    A_hat (x) (ones / prod(d)).
    """
    return fit_local_smoothing_model(dataset, lam).coefficients()


def local_smoothing_null_level(dataset: Dataset) -> float:
    """Null penalty level of the local-smoothing lasso (zero map above it)."""
    z = dataset.xr.mean(axis=2)
    return float(np.max(np.abs(z.T @ dataset.y))) / dataset.n


__all__ = [
    "Dataset",
    "DegenerateDataError",
    "FitConfig",
    "LocalSmoothModel",
    "MultiTermModel",
    "OneTermModel",
    "OverPenalizedError",
    "PathTrace",
    "coefficients",
    "deflation_init",
    "deflation_terms",
    "fit_local_smoothing",
    "fit_local_smoothing_model",
    "fit_multi_term",
    "fit_one_term",
    "hard_threshold",
    "init_location",
    "local_smoothing_null_level",
    "predict",
    "region_mask",
    "threshold_level",
]
