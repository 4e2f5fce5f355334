"""Evaluation metrics and variance diagnostics.

Two R-squared definitions are in circulation, so reports always carry
both: ``r2_sse`` (1 - SSres/SStot, can be negative out of sample) and
``r2_pearson`` (squared Pearson correlation). The within/total
sum-of-squares ratio quantifies how little a variable moves inside an
enumeration area relative to its overall spread; its ECDF across image
features is the headline contrast against the welfare targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTargetError, EmptyError
from . import textio

PERFORMANCE_HEADER = ["model", "target", "feature_set",
                      "r2_sse", "r2_pearson", "n"]
WSS_TSS_HEADER = ["feature_name", "ratio"]
ECDF_HEADER = ["value", "fraction"]


@dataclass(frozen=True)
class EvaluationReport:
    model: str
    target: str
    feature_set: str
    r2_sse: float
    r2_pearson: float
    n: int
    pearson_degenerate: bool = False


def r_squared(y, yhat) -> tuple[float, float, bool]:
    """Both R-squared definitions for one prediction vector.

    Returns:
        (r2_sse, r2_pearson, pearson_degenerate). A constant prediction
        has an undefined correlation and is reported as 0 with the
        degenerate flag set.

    Raises:
        DegenerateTargetError: the target has zero variance.
        ValueError: length mismatch or fewer than 2 observations.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("y and yhat must be 1-D vectors of equal length")
    if y.size < 2:
        raise ValueError("need at least 2 observations")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTargetError("target variance is zero")
    ss_res = float(np.sum((y - yhat) ** 2))
    r2_sse = 1.0 - ss_res / ss_tot

    dy = y - y.mean()
    dh = yhat - yhat.mean()
    denom = float(np.sqrt(np.sum(dy ** 2) * np.sum(dh ** 2)))
    if denom == 0.0:
        return r2_sse, 0.0, True
    corr = float(np.sum(dy * dh)) / denom
    return r2_sse, corr ** 2, False


def evaluate(model_label: str, target: str, feature_set: str,
             y, yhat) -> EvaluationReport:
    r2s, r2p, degenerate = r_squared(y, yhat)
    return EvaluationReport(model=model_label, target=target,
                            feature_set=feature_set, r2_sse=r2s,
                            r2_pearson=r2p, n=int(np.asarray(y).size),
                            pearson_degenerate=degenerate)


def wss_tss_ratio(values, groups) -> np.ndarray:
    """Within/total sum-of-squares ratio per feature column.

    ``values`` is (n, p) or (n,); ``groups`` assigns each row to a group.
    Features with zero total variance get NaN (reported missing, never
    silently excluded).
    """
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    groups = np.asarray(groups)
    if arr.shape[0] != groups.shape[0]:
        raise ValueError("values and groups row counts differ")
    if arr.shape[0] < 2 or len(set(groups.tolist())) < 2:
        raise ValueError("need at least 2 rows and 2 groups")

    tss = np.sum((arr - arr.mean(axis=0)) ** 2, axis=0)
    wss = np.zeros(arr.shape[1], dtype=np.float64)
    for g in np.unique(groups):
        block = arr[groups == g]
        wss += np.sum((block - block.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tss > 0.0, wss / np.where(tss > 0.0, tss, 1.0),
                         np.nan)
    return ratio[0] if squeeze else ratio


def ecdf(values) -> list[tuple[float, float]]:
    """Right-continuous ECDF step points at the sorted unique values.

    Raises:
        EmptyError: the sample is empty.
        ValueError: a value is not finite.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyError("cannot compute the ECDF of an empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("ECDF input contains non-finite values")
    unique, counts = np.unique(arr, return_counts=True)
    fractions = np.cumsum(counts) / arr.size
    return [(float(v), float(f)) for v, f in zip(unique, fractions)]


def performance_table(reports: list[EvaluationReport]) -> list[list[str]]:
    """Formatted performance rows, stably sorted by (target, feature_set)."""
    if not reports:
        raise ValueError("no reports to tabulate")
    ordered = sorted(reports, key=lambda r: (r.target, r.feature_set))
    return [[r.model, r.target, r.feature_set, textio.fmt(r.r2_sse),
             textio.fmt(r.r2_pearson), str(r.n)] for r in ordered]


def write_performance(path, reports: list[EvaluationReport]) -> None:
    textio.write_csv(path, PERFORMANCE_HEADER, performance_table(reports))


def read_performance(path) -> list[EvaluationReport]:
    header, rows = textio.read_csv(path)
    if header != PERFORMANCE_HEADER:
        raise ValueError(f"{path}: unexpected performance header {header}")
    return [EvaluationReport(model=r[0], target=r[1], feature_set=r[2],
                             r2_sse=float(r[3]), r2_pearson=float(r[4]),
                             n=int(r[5])) for r in rows]


def write_wss_tss(path, named_ratios: list[tuple[str, float]]) -> None:
    """Write (feature_name, ratio) rows; NaN ratios become empty fields."""
    rows = ([name, "" if np.isnan(ratio) else textio.fmt(ratio)]
            for name, ratio in named_ratios)
    textio.write_csv(path, WSS_TSS_HEADER, rows)


def write_ecdf(path, points: list[tuple[float, float]]) -> None:
    rows = ([textio.fmt(v), textio.fmt(f)] for v, f in points)
    textio.write_csv(path, ECDF_HEADER, rows)
