"""Evaluation: detection rates, coefficient and prediction RMSE, and the
permutation region-stability test.

FPR and TPR are pixel-level rates of the nonzero pattern of C_hat against
the truth mask, with zeros decided by |entry| > 1e-10.  Coefficient RMSE
is the Frobenius distance over the square root of the pixel count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_f64, vec
from .linear import (
    Dataset,
    LocalSmoothModel,
    MultiTermModel,
    OneTermModel,
    coefficients,
)
from .linear import predict as linear_predict
from .nonlinear import NonlinearModel, predict_dataset
from .rearrange import rearrange
from .rng import permutation_stream

ZERO_EPS = 1e-10


def fpr_tpr(c_hat, c_true, zero_eps: float = ZERO_EPS):
    """Pixel false/true positive rates of the detected support."""
    c_hat = as_f64(c_hat)
    c_true = as_f64(c_true)
    if c_hat.shape != c_true.shape:
        raise ValueError("dims disagree")
    hat_nz = np.abs(c_hat) > zero_eps
    true_nz = np.abs(c_true) > zero_eps
    n_zero = int(np.sum(~true_nz))
    n_nonzero = int(np.sum(true_nz))
    if n_zero == 0:
        raise ValueError("FPR undefined: truth has no zero entries")
    if n_nonzero == 0:
        raise ValueError("TPR undefined: truth has no nonzero entries")
    fpr = float(np.sum(hat_nz & ~true_nz)) / n_zero
    tpr = float(np.sum(hat_nz & true_nz)) / n_nonzero
    return fpr, tpr


def rmse_coeff(c_hat, c_true) -> float:
    """||C_hat - C||_F / sqrt(prod dims)."""
    c_hat = as_f64(c_hat)
    c_true = as_f64(c_true)
    if c_hat.shape != c_true.shape:
        raise ValueError("dims disagree")
    return float(np.linalg.norm(c_hat - c_true)) / np.sqrt(c_true.size)


def _predictions(model_or_c, dataset: Dataset) -> np.ndarray:
    if isinstance(model_or_c, NonlinearModel):
        return predict_dataset(model_or_c, dataset)
    if isinstance(model_or_c, (OneTermModel, MultiTermModel, LocalSmoothModel)):
        return linear_predict(model_or_c, dataset)
    c = as_f64(model_or_c)
    chat_r = rearrange(c, dataset.shape)
    return dataset.xr.reshape(dataset.n, -1) @ vec(chat_r)


def rmse_pred(model_or_c, test) -> float:
    """Root mean squared prediction error on a held-out study or dataset."""
    dataset = test.dataset if hasattr(test, "dataset") else test
    if dataset.n < 1:
        raise ValueError("empty test set")
    yhat = _predictions(model_or_c, dataset)
    return float(np.sqrt(np.mean((yhat - dataset.y) ** 2)))


def jaccard(mask_a, mask_b) -> float:
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    union = int(np.sum(a | b))
    if union == 0:
        return 0.0
    return float(np.sum(a & b)) / union


@dataclass
class PermutationTestResult:
    p_value: float
    detections: int
    failures: int
    n_perm: int
    seed: int


def permutation_region_test(
    dataset: Dataset,
    region,
    n_perm: int,
    fit_spec,
    seed: int,
    overlap: float = 0.5,
    perm_fn=None,
) -> PermutationTestResult:
    """Refit on data with the candidate region shuffled across samples.

    Per replicate, one random permutation of the sample indices is applied
    jointly to the region's voxels (all other voxels stay put), ``fit_spec``
    maps the permuted dataset to a detected boolean mask, and a replicate
    counts as a detection when its Jaccard overlap with ``region`` reaches
    ``overlap``.  The p-value is detections over the replicates whose fit
    succeeded; failures are reported separately.

    ``perm_fn(replicate) -> index array`` overrides the permutation source
    (used to force degenerate permutations in tests).
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != dataset.shape.image_dims:
        raise ValueError("region dims do not match the dataset image dims")
    if not region.any():
        raise ValueError("empty region")
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    # The rearrangement is a fixed re-indexing of pixels, so permuting image
    # voxels across samples is a column shuffle of the flattened designs.
    mask_flat = rearrange(region.astype(np.float64), dataset.shape).ravel() > 0.5
    n = dataset.n
    flat = dataset.xr.reshape(n, -1)

    detections = 0
    failures = 0
    for rep in range(n_perm):
        if perm_fn is not None:
            perm = np.asarray(perm_fn(rep), dtype=np.int64)
        else:
            perm = permutation_stream(seed, rep).permutation(n)
        shuffled = flat.copy()
        shuffled[:, mask_flat] = flat[perm][:, mask_flat]
        ds_perm = Dataset(
            y=dataset.y.copy(),
            xr=shuffled.reshape(dataset.xr.shape),
            shape=dataset.shape,
        )
        try:
            detected = np.asarray(fit_spec(ds_perm), dtype=bool)
        except Exception:  # noqa: BLE001 - fit failures are part of the protocol
            failures += 1
            continue
        if jaccard(detected, region) >= overlap:
            detections += 1
    effective = n_perm - failures
    p_value = detections / effective if effective > 0 else float("nan")
    return PermutationTestResult(
        p_value=p_value, detections=detections, failures=failures,
        n_perm=n_perm, seed=seed,
    )


def metrics_record(
    fpr=None, tpr=None, rmse=None, rmse_pred=None, p_value=None, reps=None, seed=None,
) -> dict:
    """Canonical JSON-able metrics record."""
    return {
        "fpr": fpr,
        "tpr": tpr,
        "rmse": rmse,
        "rmse_pred": rmse_pred,
        "p_value": p_value,
        "reps": reps,
        "seed": seed,
    }
