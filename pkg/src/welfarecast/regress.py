"""Feature fusion and closed-form ridge regression with group-aware CV.

Feature rows concatenate the enabled blocks in the fixed order
ms(512) | nl(512) | weather(48). Fitting standardizes columns with the
training mean and population standard deviation, drops zero-variance
columns, and solves ``(Z'Z + lambda*I) beta = Z'(y - ybar)`` via a
symmetric positive-definite factorization; the intercept is the training
target mean and is never penalized. Cross-validation folds partition
enumeration areas, not rows, so panel revisits of the same area can never
leak between train and validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    MissingBlockError,
    MissingFeatureError,
    SingularSystemError,
    TooFewGroupsError,
)
from .ingest import ImageFeatureRecord, VisitKey, IMAGE_FEATURE_NAMES
from .weather import WeatherFeatureVector, WEATHER_FEATURE_NAMES
from . import diagnose, textio

FEATURE_BLOCKS = ("ms", "nl", "weather")

_BLOCK_NAMES: dict[str, tuple[str, ...]] = {
    "ms": IMAGE_FEATURE_NAMES[:512],
    "nl": IMAGE_FEATURE_NAMES[512:],
    "weather": WEATHER_FEATURE_NAMES,
}

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 4, 17))
DEFAULT_FOLDS = 5

CV_TABLE_HEADER = ["lambda", "fold", "r2"]


def normalize_blocks(blocks: Sequence[str]) -> tuple[str, ...]:
    """Validate block names and return them in canonical order."""
    requested = set(blocks)
    unknown = requested - set(FEATURE_BLOCKS)
    if unknown:
        raise ValueError(f"unknown feature blocks: {sorted(unknown)}")
    if not requested:
        raise ValueError("at least one feature block must be enabled")
    return tuple(b for b in FEATURE_BLOCKS if b in requested)


def feature_names_for(blocks: Sequence[str]) -> tuple[str, ...]:
    names: list[str] = []
    for block in normalize_blocks(blocks):
        names.extend(_BLOCK_NAMES[block])
    return tuple(names)


def fuse_features(
    image: ImageFeatureRecord | None,
    weather_vec: WeatherFeatureVector | None,
    blocks: Sequence[str],
) -> np.ndarray:
    """Concatenate the enabled feature blocks for one observation.

    Raises:
        MissingBlockError: an enabled block's source is absent.
    """
    parts = []
    for block in normalize_blocks(blocks):
        if block in ("ms", "nl"):
            if image is None:
                raise MissingBlockError(
                    f"feature block {block!r} enabled but no image features "
                    "are available")
            parts.append(image.ms_features if block == "ms"
                         else image.nl_features)
        else:
            if weather_vec is None:
                raise MissingBlockError(
                    "feature block 'weather' enabled but no weather features "
                    "are available")
            parts.append(weather_vec.values)
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


@dataclass
class DesignMatrix:
    """Observation rows keyed by (ea_id, wave, visit) with group labels."""

    keys: list[VisitKey]
    feature_names: tuple[str, ...]
    X: np.ndarray
    groups: list[str]  # ea_id per row


def assemble_design(
    keys: Sequence[VisitKey],
    images: Mapping[VisitKey, ImageFeatureRecord] | None,
    weather_vecs: Mapping[VisitKey, WeatherFeatureVector] | None,
    blocks: Sequence[str],
) -> DesignMatrix:
    """Build the fused design matrix for the keys covered by every block.

    Keys lacking a feature row in some enabled block are dropped (they are
    unusable observations, not errors); enabling a block with no source at
    all raises :class:`MissingBlockError`.
    """
    blocks = normalize_blocks(blocks)
    needs_image = "ms" in blocks or "nl" in blocks
    if needs_image and images is None:
        raise MissingBlockError("image feature blocks enabled but no image "
                                "feature source is configured")
    if "weather" in blocks and weather_vecs is None:
        raise MissingBlockError("weather block enabled but no weather "
                                "feature source is configured")

    usable = []
    for key in keys:
        if needs_image and key not in images:
            continue
        if "weather" in blocks and key not in weather_vecs:
            continue
        usable.append(key)

    names = feature_names_for(blocks)
    X = np.empty((len(usable), len(names)), dtype=np.float64)
    for i, key in enumerate(usable):
        X[i] = fuse_features(images.get(key) if needs_image else None,
                             weather_vecs.get(key) if "weather" in blocks
                             else None, blocks)
    return DesignMatrix(keys=list(usable), feature_names=names, X=X,
                        groups=[key[0] for key in usable])


@dataclass(eq=False)
class RidgeModel:
    """Fitted ridge regression with its training standardization."""

    lam: float
    feature_names: tuple[str, ...]
    means: np.ndarray
    stdevs: np.ndarray
    coefficients: np.ndarray  # per standardized feature; 0 for dropped columns
    intercept: float
    train_metadata: dict = field(default_factory=dict)


def _as_matrix(X) -> tuple[np.ndarray, tuple[str, ...] | None]:
    if isinstance(X, DesignMatrix):
        return X.X, X.feature_names
    return np.asarray(X, dtype=np.float64), None


def ridge_fit(X, y, lam: float, feature_names: Sequence[str] | None = None,
              train_metadata: dict | None = None) -> RidgeModel:
    """Closed-form ridge fit on standardized features.

    Raises:
        SingularSystemError: the normal equations are singular (possible
            only at lambda 0 with collinear columns).
        ValueError: fewer than 2 rows or negative lambda.
    """
    arr, names = _as_matrix(X)
    if feature_names is not None:
        names = tuple(feature_names)
    if names is None:
        names = tuple(f"x{j}" for j in range(arr.shape[1]))
    y = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("ridge_fit requires at least 2 rows")
    if arr.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    if lam < 0:
        raise ValueError("lambda must be >= 0")

    means = arr.mean(axis=0)
    stdevs = arr.std(axis=0)  # population stdev
    keep = stdevs > 0.0
    intercept = float(y.mean())
    coefficients = np.zeros(arr.shape[1], dtype=np.float64)
    if np.any(keep):
        z = (arr[:, keep] - means[keep]) / stdevs[keep]
        gram = z.T @ z
        gram[np.diag_indices_from(gram)] += lam
        rhs = z.T @ (y - intercept)
        try:
            cho = scipy.linalg.cho_factor(gram, lower=True)
            coefficients[keep] = scipy.linalg.cho_solve(cho, rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise SingularSystemError(
                f"ridge system is singular at lambda={lam}: {exc}") from exc

    return RidgeModel(lam=float(lam), feature_names=names, means=means,
                      stdevs=stdevs, coefficients=coefficients,
                      intercept=intercept,
                      train_metadata=dict(train_metadata or {}))


def predict(model: RidgeModel, X, feature_names: Sequence[str] | None = None,
            ) -> np.ndarray:
    """Predict with training standardization: yhat = b0 + ((x-m)/s) . beta.

    Rows must carry every model feature; a :class:`DesignMatrix` (or an
    explicit ``feature_names``) is aligned by name, a bare array must
    already match the model's column order.

    Raises:
        MissingFeatureError: a model feature is absent from the rows.
    """
    arr, names = _as_matrix(X)
    if feature_names is not None:
        names = tuple(feature_names)
    if names is not None and names != model.feature_names:
        index = {name: j for j, name in enumerate(names)}
        try:
            order = [index[name] for name in model.feature_names]
        except KeyError as exc:
            raise MissingFeatureError(
                f"prediction rows lack feature {exc.args[0]!r}") from None
        arr = arr[:, order]
    elif arr.shape[1] != len(model.feature_names):
        raise MissingFeatureError(
            f"expected {len(model.feature_names)} feature columns, "
            f"got {arr.shape[1]}")

    safe_stdevs = np.where(model.stdevs > 0.0, model.stdevs, 1.0)
    z = (arr - model.means) / safe_stdevs
    return model.intercept + z @ model.coefficients


def group_kfold(groups: Sequence[str], k: int, seed: int,
                ) -> list[np.ndarray]:
    """Deterministic k folds of row indices partitioning the group labels.

    Raises:
        TooFewGroupsError: fewer distinct groups than folds.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    unique = sorted(set(groups))
    if len(unique) < k:
        raise TooFewGroupsError(
            f"{len(unique)} group(s) cannot be split into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    fold_of_group = {unique[g]: i % k for i, g in enumerate(order)}
    row_folds = np.array([fold_of_group[g] for g in groups])
    return [np.flatnonzero(row_folds == f) for f in range(k)]


@dataclass(frozen=True)
class CvCell:
    lam: float
    fold: int
    r2: float


def cv_select_lambda(
    X, y, lambda_grid: Sequence[float] | None = None,
    k: int = DEFAULT_FOLDS, seed: int = 0,
    groups: Sequence[str] | None = None,
) -> tuple[float, list[CvCell]]:
    """Pick the shrinkage maximizing mean held-out R-squared over group folds.

    Standardization happens inside each training fold; validation rows are
    never seen by the scaler. Ties prefer the larger lambda.

    Returns:
        (best lambda, per-(lambda, fold) score table).
    """
    arr, _ = _as_matrix(X)
    if groups is None:
        if not isinstance(X, DesignMatrix):
            raise ValueError("groups are required when X is a bare array")
        groups = X.groups
    y = np.asarray(y, dtype=np.float64)
    grid = sorted(float(v) for v in (lambda_grid if lambda_grid is not None
                                     else DEFAULT_LAMBDA_GRID))
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    folds = group_kfold(groups, k, seed)

    scores = np.empty((len(grid), len(folds)), dtype=np.float64)
    for f, val_idx in enumerate(folds):
        train_mask = np.ones(arr.shape[0], dtype=bool)
        train_mask[val_idx] = False
        x_tr, y_tr = arr[train_mask], y[train_mask]
        x_val, y_val = arr[val_idx], y[val_idx]

        means = x_tr.mean(axis=0)
        stdevs = x_tr.std(axis=0)
        keep = stdevs > 0.0
        ybar = float(y_tr.mean())
        z_tr = (x_tr[:, keep] - means[keep]) / stdevs[keep]
        z_val = (x_val[:, keep] - means[keep]) / stdevs[keep]
        gram = z_tr.T @ z_tr
        rhs = z_tr.T @ (y_tr - ybar)
        diag = np.diag_indices_from(gram)
        base_diag = gram[diag].copy()
        for i, lam in enumerate(grid):
            gram[diag] = base_diag + lam
            try:
                cho = scipy.linalg.cho_factor(gram, lower=True)
                beta = scipy.linalg.cho_solve(cho, rhs)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                raise SingularSystemError(
                    f"CV fold {f} is singular at lambda={lam}: {exc}") from exc
            yhat = ybar + z_val @ beta
            r2, _, _ = diagnose.r_squared(y_val, yhat)
            scores[i, f] = r2

    mean_scores = scores.mean(axis=1)
    best_i = 0
    for i in range(len(grid)):
        if mean_scores[i] >= mean_scores[best_i]:
            best_i = i
    table = [CvCell(lam=grid[i], fold=f, r2=float(scores[i, f]))
             for i in range(len(grid)) for f in range(len(folds))]
    return grid[best_i], table


def cv_heldout_predictions(X, y, lam: float, k: int = DEFAULT_FOLDS,
                           seed: int = 0,
                           groups: Sequence[str] | None = None) -> np.ndarray:
    """Out-of-fold predictions: each row predicted by the model whose
    training folds exclude the row's group."""
    arr, names = _as_matrix(X)
    if groups is None:
        if not isinstance(X, DesignMatrix):
            raise ValueError("groups are required when X is a bare array")
        groups = X.groups
    y = np.asarray(y, dtype=np.float64)
    folds = group_kfold(groups, k, seed)
    yhat = np.empty(arr.shape[0], dtype=np.float64)
    for val_idx in folds:
        train_mask = np.ones(arr.shape[0], dtype=bool)
        train_mask[val_idx] = False
        model = ridge_fit(arr[train_mask], y[train_mask], lam,
                          feature_names=names)
        yhat[val_idx] = predict(model, arr[val_idx], feature_names=names)
    return yhat


def write_cv_table(path, table: list[CvCell]) -> None:
    rows = ([textio.fmt(cell.lam), str(cell.fold), textio.fmt(cell.r2)]
            for cell in table)
    textio.write_csv(path, CV_TABLE_HEADER, rows)


def save_model(model: RidgeModel, path: str | Path) -> None:
    """Serialize a fitted model to the documented JSON layout."""
    payload = {
        "lambda": model.lam,
        "feature_names": list(model.feature_names),
        "means": [float(v) for v in model.means],
        "stdevs": [float(v) for v in model.stdevs],
        "coefficients": [float(v) for v in model.coefficients],
        "intercept": model.intercept,
        "train_metadata": model.train_metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> RidgeModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return RidgeModel(
        lam=float(payload["lambda"]),
        feature_names=tuple(payload["feature_names"]),
        means=np.array(payload["means"], dtype=np.float64),
        stdevs=np.array(payload["stdevs"], dtype=np.float64),
        coefficients=np.array(payload["coefficients"], dtype=np.float64),
        intercept=float(payload["intercept"]),
        train_metadata=payload.get("train_metadata", {}),
    )
