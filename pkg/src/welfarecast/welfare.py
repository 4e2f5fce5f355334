"""Welfare targets: pooled-survey asset index and log per-capita consumption.

The asset index is the first principal component of the correlation matrix
of binary ownership indicators for assets recorded by both survey sources.
Columns are standardized with the population (1/n) standard deviation, and
the loading vector's sign is fixed so its sum is non-negative, making
higher index values correspond to owning more assets. Consumption targets
average household per-capita expenditure within an enumeration-area visit
first, then take the natural log.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateMatrixError,
    EmptyGroupError,
    MissingAssetError,
    NoCommonAssetsError,
    NonpositiveConsumptionError,
)
from .ingest import (
    AssetInventory,
    EnumerationAreaVisit,
    HouseholdConsumptionRecord,
    Visit,
    VisitKey,
)
from . import textio

logger = logging.getLogger(__name__)

TARGETS_HEADER = ["ea_id", "wave", "visit", "kind", "value"]


class TargetKind(enum.Enum):
    ASSET_INDEX = "asset_index"
    LOG_PC_CONSUMPTION = "log_pc_consumption"


@dataclass(frozen=True)
class WelfareTarget:
    ea_id: str
    wave: int
    visit: Visit
    kind: TargetKind
    value: float

    @property
    def visit_key(self) -> VisitKey:
        return (self.ea_id, self.wave, self.visit)


@dataclass(eq=False, frozen=True)
class AssetIndexModel:
    """First-principal-component index over the common asset set.

    ``loadings`` is a unit vector over the retained (non-constant) assets;
    ``sign`` records the orientation flip that was applied to it.
    """

    asset_names: tuple[str, ...]
    means: np.ndarray
    stdevs: np.ndarray
    loadings: np.ndarray
    sign: int


def build_pooled_asset_matrix(
    inventories: list[AssetInventory],
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Pool inventories across sources into a households x assets 0/1 matrix.

    Columns are restricted to assets recorded by at least one GHS and at
    least one DHS inventory, in lexicographic order; rows keep input order.

    Raises:
        NoCommonAssetsError: the two sources share no asset.
        ValueError: fewer than two households.
        MissingAssetError: an inventory lacks a common asset indicator.
    """
    if len(inventories) < 2:
        raise ValueError("need at least 2 households to pool asset inventories")
    by_source: dict[str, set[str]] = {"GHS": set(), "DHS": set()}
    for inv in inventories:
        by_source[inv.source].update(inv.ownership.keys())
    common = sorted(by_source["GHS"] & by_source["DHS"])
    if not common:
        raise NoCommonAssetsError(
            "no asset is recorded by both GHS and DHS inventories")

    matrix = np.empty((len(inventories), len(common)), dtype=np.float64)
    for i, inv in enumerate(inventories):
        for j, name in enumerate(common):
            try:
                matrix[i, j] = inv.ownership[name]
            except KeyError:
                raise MissingAssetError(
                    f"household {inv.hh_id!r} has no indicator for "
                    f"common asset {name!r}") from None
    return matrix, tuple(common)


def fit_asset_index(matrix: np.ndarray,
                    asset_names: tuple[str, ...]) -> AssetIndexModel:
    """Fit the first principal component of the standardized asset matrix.

    Zero-variance columns are dropped with a logged warning. The dominant
    eigenvector of the correlation matrix is oriented so that its loadings
    sum to a non-negative value (tie broken by making the first nonzero
    loading positive).

    Raises:
        DegenerateMatrixError: every column is constant.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise ValueError("asset matrix must have at least 2 rows")
    if matrix.shape[1] != len(asset_names):
        raise ValueError("asset_names length does not match matrix columns")

    means = matrix.mean(axis=0)
    stdevs = matrix.std(axis=0)  # population (1/n) stdev
    keep = stdevs > 0.0
    if not np.any(keep):
        raise DegenerateMatrixError("all asset columns are constant")
    dropped = [name for name, k in zip(asset_names, keep) if not k]
    if dropped:
        logger.warning("dropping %d zero-variance asset column(s): %s",
                       len(dropped), ", ".join(dropped))

    kept_names = tuple(n for n, k in zip(asset_names, keep) if k)
    z = (matrix[:, keep] - means[keep]) / stdevs[keep]
    corr = (z.T @ z) / matrix.shape[0]
    eigvals, eigvecs = np.linalg.eigh(corr)
    loadings = eigvecs[:, int(np.argmax(eigvals))]

    total = loadings.sum()
    if total > 0:
        sign = 1
    elif total < 0:
        sign = -1
    else:
        nonzero = loadings[loadings != 0.0]
        sign = 1 if (nonzero.size == 0 or nonzero[0] > 0) else -1
    loadings = sign * loadings

    return AssetIndexModel(asset_names=kept_names, means=means[keep],
                           stdevs=stdevs[keep], loadings=loadings, sign=sign)


def score_asset_index(model: AssetIndexModel, inventory: AssetInventory) -> float:
    """Project one household's standardized indicators onto the loadings.

    Raises:
        MissingAssetError: the inventory misses an asset the model requires.
    """
    x = np.empty(len(model.asset_names), dtype=np.float64)
    for j, name in enumerate(model.asset_names):
        try:
            x[j] = inventory.ownership[name]
        except KeyError:
            raise MissingAssetError(
                f"household {inventory.hh_id!r} has no indicator for "
                f"asset {name!r}") from None
    return float(((x - model.means) / model.stdevs) @ model.loadings)


def ea_asset_scores(
    model: AssetIndexModel, inventories: list[AssetInventory],
) -> dict[tuple[str, int], float]:
    """Mean household score per (ea_id, survey_year) group."""
    sums: dict[tuple[str, int], list[float]] = defaultdict(list)
    for inv in inventories:
        sums[(inv.ea_id, inv.survey_year)].append(score_asset_index(model, inv))
    return {key: float(np.mean(vals)) for key, vals in sorted(sums.items())}


def asset_index_targets(
    model: AssetIndexModel,
    inventories: list[AssetInventory],
    visits: dict[VisitKey, EnumerationAreaVisit],
) -> list[WelfareTarget]:
    """Attach EA-level asset scores to post-planting visits.

    A score group keyed (ea_id, survey_year) becomes a target for the EA's
    post-planting visit whose end date falls in that calendar year. Groups
    with no matching visit (e.g. DHS-only enumeration areas) produce no
    target but still contributed to the fitted index.
    """
    scores = ea_asset_scores(model, inventories)
    by_ea_year: dict[tuple[str, int], VisitKey] = {}
    for key, rec in visits.items():
        if rec.visit is Visit.POST_PLANTING:
            by_ea_year[(rec.ea_id, rec.end_date.year)] = key

    targets = []
    for (ea_id, year), value in scores.items():
        key = by_ea_year.get((ea_id, year))
        if key is not None:
            targets.append(WelfareTarget(key[0], key[1], key[2],
                                         TargetKind.ASSET_INDEX, value))
    targets.sort(key=lambda t: (t.ea_id, t.wave, t.visit.value))
    return targets


def aggregate_log_consumption(
    records: list[HouseholdConsumptionRecord], key: VisitKey,
) -> WelfareTarget:
    """Log of the mean household per-capita expenditure for one visit.

    The average comes first and the log second.

    Raises:
        EmptyGroupError: no household record matches the key.
        NonpositiveConsumptionError: a per-capita value is not > 0.
    """
    ea_id, wave, visit = key
    per_capita = []
    for rec in records:
        if rec.visit_key != key:
            continue
        pc = rec.total_expenditure / rec.household_size
        if pc <= 0:
            raise NonpositiveConsumptionError(
                f"household {rec.hh_id!r} has per-capita expenditure {pc}")
        per_capita.append(pc)
    if not per_capita:
        raise EmptyGroupError(
            f"no household records for ({ea_id!r}, wave {wave}, {visit.value})")
    value = math.log(float(np.mean(per_capita)))
    return WelfareTarget(ea_id, wave, visit,
                         TargetKind.LOG_PC_CONSUMPTION, value)


def consumption_targets(
    records: list[HouseholdConsumptionRecord],
) -> list[WelfareTarget]:
    """One log-consumption target per enumeration-area visit present."""
    keys = sorted({rec.visit_key for rec in records},
                  key=lambda k: (k[0], k[1], k[2].value))
    return [aggregate_log_consumption(records, key) for key in keys]


def write_targets(path, targets: list[WelfareTarget]) -> None:
    rows = ([t.ea_id, str(t.wave), t.visit.value, t.kind.value,
             textio.fmt(t.value)] for t in targets)
    textio.write_csv(path, TARGETS_HEADER, rows)


def read_targets(path) -> list[WelfareTarget]:
    header, rows = textio.read_csv(path)
    if header != TARGETS_HEADER:
        raise ValueError(f"{path}: unexpected targets header {header}")
    return [WelfareTarget(r[0], int(r[1]), Visit(r[2]), TargetKind(r[3]),
                          float(r[4])) for r in rows]
