"""Model-size selection by modified BIC over (lambda_tgt, rank).

The score is log(mean RSS) + (C_n log n / n) * s0 with
C_n = log(log(rank * p_total)) and s0 the support size of the stacked
location matrix.  The support is counted on the lasso iterate before
orthonormalization (which mixes columns and densifies them); the
post-orthonormalization count is recorded alongside for reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linear import (
    Dataset,
    FitConfig,
    MultiTermModel,
    PathTrace,
    deflation_init,
    fit_multi_term,
    hard_threshold,
    predict,
)


def modified_bic(rss_mean: float, n: int, s0: int, rank: int, p_total: int) -> float:
    """Modified BIC score; natural logs throughout.

    Requires rank * p_total >= 3 so the log-log factor is defined and
    positive.
    """
    if rss_mean <= 0.0:
        raise ValueError("rss_mean must be positive")
    if n < 1 or s0 < 0 or rank < 1:
        raise ValueError("bad count argument")
    if rank * p_total < 3:
        raise ValueError(
            f"rank * p_total = {rank * p_total} <= e: log log penalty undefined "
            "(degenerate grid)"
        )
    c_n = math.log(math.log(rank * p_total))
    return math.log(rss_mean) + c_n * math.log(n) / n * s0


@dataclass
class SelectionResult:
    lambda_tgt: float
    rank: int
    model: MultiTermModel
    trace: PathTrace
    table: list
    failures: list


def select_by_bic(
    dataset: Dataset,
    lambda_grid,
    rank_grid,
    config: FitConfig | None = None,
    threshold_c: float | None = 0.1,
) -> SelectionResult:
    """Fit every (lambda_tgt, rank) cell and return the BIC argmin.

    The greedy location initialization is computed once at the largest
    rank and sliced per cell (its columns are nested); within a rank,
    cells run in descending lambda order and warm start from the previous
    solution.  Ties break toward smaller rank, then larger lambda; both
    orders coincide with the scan order so the first best cell wins.

    With ``threshold_c`` set (the default), each cell is scored on its
    hard-thresholded model: the penalty path that activates weak terms
    leaves many near-zero location coordinates, and scoring the raw lasso
    support would always favor rank 1.  The raw (pre-orthonormalization)
    and post-orthonormalization support counts are recorded alongside;
    ``threshold_c=None`` scores the raw support instead.

    Cell failures are collected; if every cell fails, a RuntimeError
    aggregates the causes.
    """
    cfg = config or FitConfig()
    lambdas = sorted(set(float(v) for v in lambda_grid), reverse=True)
    ranks = sorted(set(int(r) for r in rank_grid))
    if not lambdas or not ranks:
        raise ValueError("empty tuning grid")
    n, p, _ = dataset.xr.shape

    defl = None
    if max(ranks) > 1:
        try:
            defl = deflation_init(dataset, max(ranks), cfg)
        except Exception:  # noqa: BLE001 - cells fall back to their own init
            defl = None

    table = []
    failures = []
    best = None
    for rank in ranks:
        warm = None if defl is None or rank == 1 else defl[:, :rank]
        for lam in lambdas:
            cell_cfg = replace(cfg, lambda_tgt=lam)
            try:
                model, trace = fit_multi_term(dataset, rank, cell_cfg, init_abar=warm)
            except Exception as exc:  # noqa: BLE001 - per-cell isolation
                failures.append((lam, rank, f"{type(exc).__name__}: {exc}"))
                continue
            warm = model.abar
            s0_raw = int(trace.a_nnz[-1]) if trace.a_nnz else 0
            s0_post = int(np.count_nonzero(model.abar))
            if threshold_c is None:
                scored = model
                s0 = s0_raw
            else:
                scored = hard_threshold(model, threshold_c, n)
                s0 = int(np.count_nonzero(scored.abar))
            resid = dataset.y - predict(scored, dataset)
            rss_mean = float(resid @ resid) / n
            bic = modified_bic(max(rss_mean, 1e-300), n, s0, rank, p)
            table.append(
                {
                    "lambda": lam,
                    "R": rank,
                    "s0": s0,
                    "rss_mean": rss_mean,
                    "bic": bic,
                    "s0_raw": s0_raw,
                    "s0_post": s0_post,
                }
            )
            if best is None or bic < best[0]:
                best = (bic, lam, rank, model, trace)
    if best is None:
        causes = "; ".join(f"(lam={l}, R={r}): {m}" for l, r, m in failures)
        raise RuntimeError(f"every tuning cell failed: {causes}")
    _, lam, rank, model, trace = best
    return SelectionResult(
        lambda_tgt=lam, rank=rank, model=model, trace=trace,
        table=table, failures=failures,
    )


def score_table_csv(table) -> str:
    """Serialize a selection table as CSV (lambda, R, s0, rss_mean, bic, ...)."""
    lines = ["lambda,R,s0,rss_mean,bic,s0_raw,s0_post"]
    for row in table:
        lines.append(
            f"{format(row['lambda'], '.17g')},{row['R']},{row['s0']},"
            f"{format(row['rss_mean'], '.17g')},{format(row['bic'], '.17g')},"
            f"{row.get('s0_raw', row['s0'])},{row['s0_post']}"
        )
    return "\n".join(lines) + "\n"
