"""Gridded model predictions over a bounding box of arc-degree cells.

Cells are half-open [lon, lon+s) x [lat, lat+s) tiles anchored at the
box's south-west corner, enumerated row-major from (lat_min, lon_min).
Cells whose feature blocks are incomplete are explicitly missing, never
zero-filled. Rasters are exported as plain CSV with full-precision
decimal values so a re-import is bit-exact.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigMismatchError, InvalidSpecError, IoError
from .regress import RidgeModel, predict, fuse_features, feature_names_for
from .ingest import ImageFeatureRecord, Visit
from .weather import WeatherFeatureVector
from . import textio

RASTER_HEADER = ["lon_min", "lat_min", "period", "value"]

# Guards against spans like 1.0/0.1 -> 10.000000000000002 inflating the
# ceiling; a billionth of a cell is far below any real coordinate noise.
_CEIL_EPS = 1e-9


def _cell_count(span: float, size: float) -> int:
    q = span / size
    n = math.floor(q)
    if q - n > _CEIL_EPS:
        n += 1
    return max(n, 0)


@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    cell_size: float = 0.1

    def validate(self) -> None:
        if not (self.lat_min < self.lat_max):
            raise InvalidSpecError("lat_min must be < lat_max")
        if not (self.lon_min < self.lon_max):
            raise InvalidSpecError("lon_min must be < lon_max")
        if not (self.cell_size > 0):
            raise InvalidSpecError("cell_size must be > 0")

    @property
    def n_rows(self) -> int:
        return _cell_count(self.lat_max - self.lat_min, self.cell_size)

    @property
    def n_cols(self) -> int:
        return _cell_count(self.lon_max - self.lon_min, self.cell_size)


@dataclass(frozen=True)
class Cell:
    row: int
    col: int
    lat: float  # south edge
    lon: float  # west edge
    size: float

    @property
    def centroid(self) -> tuple[float, float]:
        """(lat, lon) of the cell center."""
        return (self.lat + self.size / 2.0, self.lon + self.size / 2.0)


def make_grid(spec: GridSpec) -> list[Cell]:
    """All cells of the box, row-major from the south-west corner.

    Raises:
        InvalidSpecError: the bounding box or cell size is malformed.
    """
    spec.validate()
    cells = []
    for i in range(spec.n_rows):
        for j in range(spec.n_cols):
            cells.append(Cell(row=i, col=j,
                              lat=spec.lat_min + i * spec.cell_size,
                              lon=spec.lon_min + j * spec.cell_size,
                              size=spec.cell_size))
    return cells


@dataclass
class RasterLayer:
    spec: GridSpec
    period: str
    target_kind: str
    values: np.ndarray  # (n_rows * n_cols,) row-major; NaN = missing

    def __post_init__(self):
        expected = self.spec.n_rows * self.spec.n_cols
        if self.values.shape != (expected,):
            raise InvalidSpecError(
                f"raster needs {expected} cells, got {self.values.shape}")


CellBlocks = Mapping[tuple[int, int], Mapping[str, np.ndarray]]


def _model_blocks(model: RidgeModel) -> tuple[str, ...]:
    names = set(model.feature_names)
    blocks = []
    for block in ("ms", "nl", "weather"):
        block_names = set(feature_names_for([block]))
        if block_names <= names:
            blocks.append(block)
            names -= block_names
        elif block_names & names:
            raise ConfigMismatchError(
                f"model covers only part of feature block {block!r}")
    if names:
        raise ConfigMismatchError(
            f"model has feature names outside the known blocks: "
            f"{sorted(names)[:3]}...")
    return tuple(blocks)


def predict_grid(model: RidgeModel, cell_blocks: CellBlocks, spec: GridSpec,
                 period: str, target_kind: str = "",
                 threads: int = 1) -> RasterLayer:
    """Evaluate the model on every cell with complete feature blocks.

    ``cell_blocks`` maps (row, col) to {"ms": 512-vector, "nl": 512-vector,
    "weather": 48-vector} parts; cells absent from the mapping, or missing
    a required part, come out missing.

    Raises:
        ConfigMismatchError: the model's feature names do not decompose
            into whole blocks, or a supplied part has the wrong length.
    """
    spec.validate()
    required = _model_blocks(model)
    cells = make_grid(spec)
    values = np.full(len(cells), np.nan)

    rows_with_features = []
    fused = []
    for idx, cell in enumerate(cells):
        parts = cell_blocks.get((cell.row, cell.col))
        if parts is None or any(b not in parts for b in required):
            continue
        image = None
        if "ms" in required or "nl" in required:
            ms = np.asarray(parts.get("ms", np.zeros(512)), dtype=np.float64)
            nl = np.asarray(parts.get("nl", np.zeros(512)), dtype=np.float64)
            if ("ms" in required and ms.shape != (512,)) or \
               ("nl" in required and nl.shape != (512,)):
                raise ConfigMismatchError(
                    f"cell ({cell.row},{cell.col}): image part has wrong "
                    "length")
            image = ImageFeatureRecord("", 1, Visit.POST_PLANTING, ms, nl)
        weather_vec = None
        if "weather" in required:
            w = np.asarray(parts["weather"], dtype=np.float64)
            if w.shape != (48,):
                raise ConfigMismatchError(
                    f"cell ({cell.row},{cell.col}): weather part has wrong "
                    "length")
            weather_vec = WeatherFeatureVector(values=w)
        fused.append(fuse_features(image, weather_vec, required))
        rows_with_features.append(idx)

    if rows_with_features:
        X = np.vstack(fused)
        if threads > 1:
            chunks = np.array_split(np.arange(X.shape[0]),
                                    min(threads, X.shape[0]))
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts_out = list(pool.map(
                    lambda idxs: predict(model, X[idxs]), chunks))
            yhat = np.concatenate(parts_out)
        else:
            yhat = predict(model, X)
        values[np.array(rows_with_features)] = yhat
    return RasterLayer(spec=spec, period=period, target_kind=target_kind,
                       values=values)


def export_raster(layers: RasterLayer | Sequence[RasterLayer], path) -> None:
    """Write lon_min,lat_min,period,value rows, row-major from the SW corner.

    Accepts one layer or a sequence of per-period layers concatenated in
    order, so the file always holds rows x cols x periods rows. Missing
    cells keep their row with an empty value field. Values use 17
    significant digits so re-parsing restores them bit-exactly.

    Raises:
        IoError: the file cannot be written.
    """
    if isinstance(layers, RasterLayer):
        layers = [layers]

    def rows():
        for layer in layers:
            spec = layer.spec
            idx = 0
            for i in range(spec.n_rows):
                lat = spec.lat_min + i * spec.cell_size
                for j in range(spec.n_cols):
                    lon = spec.lon_min + j * spec.cell_size
                    v = layer.values[idx]
                    idx += 1
                    yield [textio.fmt(lon), textio.fmt(lat), layer.period,
                           "" if np.isnan(v) else textio.fmt17(v)]
    try:
        textio.write_csv(path, RASTER_HEADER, rows())
    except OSError as exc:
        raise IoError(f"cannot write raster to {path}: {exc}") from exc


def read_raster(path) -> list[tuple[float, float, str, float | None]]:
    """Parse an exported raster back into (lon, lat, period, value) rows."""
    try:
        header, rows = textio.read_csv(path)
    except OSError as exc:
        raise IoError(f"cannot read raster from {path}: {exc}") from exc
    if header != RASTER_HEADER:
        raise ValueError(f"{path}: unexpected raster header {header}")
    return [(float(r[0]), float(r[1]), r[2],
             None if r[3] == "" else float(r[3])) for r in rows]
