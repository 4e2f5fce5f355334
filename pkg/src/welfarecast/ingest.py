"""Parse and validate the five input CSVs into the canonical data model.

All files are UTF-8 comma-separated with a required header row and ISO-8601
dates. Loading is deterministic: the same bytes always produce an equal
in-memory bundle. Loaded collections are treated as immutable and may be
shared across threads.
"""

from __future__ import annotations

import datetime
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    DimensionError,
    DuplicateDateError,
    NonFiniteError,
    ReferentialError,
    SchemaError,
)
from . import textio

VISITS_HEADER = ["ea_id", "wave", "visit", "end_date", "lat", "lon"]
HOUSEHOLDS_HEADER = ["hh_id", "ea_id", "wave", "visit",
                     "total_expenditure", "household_size"]
ASSETS_KEY_HEADER = ["hh_id", "source", "survey_year", "ea_id"]
WEATHER_HEADER = ["cell_id", "date", "precip_total_mm", "temp_mean_c"]

N_IMAGE_FEATURES = 1024
N_MS_FEATURES = 512

IMAGE_FEATURE_NAMES = tuple(f"f{i:04d}" for i in range(1, N_IMAGE_FEATURES + 1))
FEATURES_HEADER = ["ea_id", "wave", "visit", *IMAGE_FEATURE_NAMES]


class Visit(enum.Enum):
    """Within-wave survey trip."""

    POST_PLANTING = "PP"
    POST_HARVEST = "PH"


VisitKey = tuple[str, int, Visit]


@dataclass(frozen=True)
class EnumerationAreaVisit:
    """One survey trip to one enumeration area.

    Coordinates are stored as published, i.e. displaced by up to 10 km for
    respondent privacy; no de-jittering is attempted.
    """

    ea_id: str
    wave: int
    visit: Visit
    end_date: datetime.date
    lat: float
    lon: float

    @property
    def key(self) -> VisitKey:
        return (self.ea_id, self.wave, self.visit)


@dataclass(frozen=True)
class HouseholdConsumptionRecord:
    hh_id: str
    ea_id: str
    wave: int
    visit: Visit
    total_expenditure: float
    household_size: int

    @property
    def visit_key(self) -> VisitKey:
        return (self.ea_id, self.wave, self.visit)


@dataclass(frozen=True)
class AssetInventory:
    """Binary asset-ownership indicators for one household in one survey year."""

    hh_id: str
    source: str  # "GHS" or "DHS"
    survey_year: int
    ea_id: str
    ownership: Mapping[str, int] = field(compare=True)


@dataclass(eq=False)
class ImageFeatureRecord:
    """Concatenated CNN features for one enumeration-area visit."""

    ea_id: str
    wave: int
    visit: Visit
    ms_features: np.ndarray
    nl_features: np.ndarray

    @property
    def key(self) -> VisitKey:
        return (self.ea_id, self.wave, self.visit)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageFeatureRecord):
            return NotImplemented
        return (self.key == other.key
                and np.array_equal(self.ms_features, other.ms_features)
                and np.array_equal(self.nl_features, other.nl_features))


@dataclass
class SurveyBundle:
    """Validated survey collections joined on enumeration-area/visit keys."""

    visits: dict[VisitKey, EnumerationAreaVisit]
    households: list[HouseholdConsumptionRecord]
    inventories: list[AssetInventory]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SurveyBundle):
            return NotImplemented
        return (self.visits == other.visits
                and sorted(self.households, key=lambda h: h.hh_id + h.ea_id
                           + str(h.wave) + h.visit.value)
                == sorted(other.households, key=lambda h: h.hh_id + h.ea_id
                          + str(h.wave) + h.visit.value)
                and sorted(self.inventories, key=lambda a: (a.hh_id, a.survey_year))
                == sorted(other.inventories, key=lambda a: (a.hh_id, a.survey_year)))


@dataclass
class WeatherSeries:
    """Date-sorted daily series for one grid cell."""

    dates: np.ndarray   # datetime64[D], strictly increasing
    precip: np.ndarray  # float64, mm
    temp: np.ndarray    # float64, deg C


@dataclass
class WeatherTable:
    cells: dict[str, WeatherSeries]


def _check_header(actual: list[str], expected: list[str], filename: str) -> None:
    if actual != expected:
        raise SchemaError(
            f"{filename}: expected header {expected}, got {actual}")


def _parse_date(text: str, context: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"{context}: invalid ISO date {text!r}") from exc


def _parse_int(text: str, context: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ValueError(f"{context}: invalid integer {text!r}") from exc


def _parse_float(text: str, context: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ValueError(f"{context}: invalid number {text!r}") from exc


def _parse_visit(text: str, context: str) -> Visit:
    try:
        return Visit(text)
    except ValueError as exc:
        raise ValueError(f"{context}: visit must be PP or PH, got {text!r}") from exc


def load_visits(path: str | Path) -> dict[VisitKey, EnumerationAreaVisit]:
    header, rows = textio.read_csv(path)
    _check_header(header, VISITS_HEADER, str(path))
    visits: dict[VisitKey, EnumerationAreaVisit] = {}
    for i, row in enumerate(rows, start=2):
        ctx = f"{path}:{i}"
        if len(row) != len(VISITS_HEADER):
            raise SchemaError(f"{ctx}: expected {len(VISITS_HEADER)} fields")
        ea_id, wave_s, visit_s, date_s, lat_s, lon_s = row
        wave = _parse_int(wave_s, ctx)
        if not 1 <= wave <= 4:
            raise ValueError(f"{ctx}: wave must be in 1..4, got {wave}")
        visit = _parse_visit(visit_s, ctx)
        lat = _parse_float(lat_s, ctx)
        lon = _parse_float(lon_s, ctx)
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"{ctx}: latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"{ctx}: longitude {lon} outside [-180, 180]")
        rec = EnumerationAreaVisit(ea_id, wave, visit,
                                   _parse_date(date_s, ctx), lat, lon)
        if rec.key in visits:
            raise ValueError(f"{ctx}: duplicate visit key {rec.key}")
        visits[rec.key] = rec
    return visits


def load_survey_bundle(visits_file: str | Path, households_file: str | Path,
                       assets_file: str | Path) -> SurveyBundle:
    """Load and cross-validate the three survey files.

    Raises:
        SchemaError: a header is missing or renamed.
        ReferentialError: a household row cites an unknown (ea_id, wave, visit).
        ValueError: a field violates its type invariant (non-binary asset
            indicator, household size below 1, negative expenditure, ...).
    """
    visits = load_visits(visits_file)

    header, rows = textio.read_csv(households_file)
    _check_header(header, HOUSEHOLDS_HEADER, str(households_file))
    households: list[HouseholdConsumptionRecord] = []
    for i, row in enumerate(rows, start=2):
        ctx = f"{households_file}:{i}"
        if len(row) != len(HOUSEHOLDS_HEADER):
            raise SchemaError(f"{ctx}: expected {len(HOUSEHOLDS_HEADER)} fields")
        hh_id, ea_id, wave_s, visit_s, exp_s, size_s = row
        wave = _parse_int(wave_s, ctx)
        if not 1 <= wave <= 4:
            raise ValueError(f"{ctx}: wave must be in 1..4, got {wave}")
        visit = _parse_visit(visit_s, ctx)
        expenditure = _parse_float(exp_s, ctx)
        size = _parse_int(size_s, ctx)
        if expenditure < 0:
            raise ValueError(f"{ctx}: total_expenditure must be >= 0")
        if size < 1:
            raise ValueError(f"{ctx}: household_size must be >= 1")
        if (ea_id, wave, visit) not in visits:
            raise ReferentialError(
                f"{ctx}: household {hh_id!r} references unknown visit "
                f"({ea_id!r}, wave {wave}, {visit.value})")
        households.append(HouseholdConsumptionRecord(
            hh_id, ea_id, wave, visit, expenditure, size))

    header, rows = textio.read_csv(assets_file)
    if header[:len(ASSETS_KEY_HEADER)] != ASSETS_KEY_HEADER:
        raise SchemaError(
            f"{assets_file}: header must start with {ASSETS_KEY_HEADER}, "
            f"got {header[:len(ASSETS_KEY_HEADER)]}")
    asset_names = header[len(ASSETS_KEY_HEADER):]
    if len(set(asset_names)) != len(asset_names):
        raise SchemaError(f"{assets_file}: duplicate asset columns")
    inventories: list[AssetInventory] = []
    for i, row in enumerate(rows, start=2):
        ctx = f"{assets_file}:{i}"
        if len(row) != len(header):
            raise SchemaError(f"{ctx}: expected {len(header)} fields")
        hh_id, source, year_s, ea_id = row[:4]
        if source not in ("GHS", "DHS"):
            raise ValueError(f"{ctx}: source must be GHS or DHS, got {source!r}")
        year = _parse_int(year_s, ctx)
        ownership: dict[str, int] = {}
        for name, value in zip(asset_names, row[4:]):
            if value not in ("0", "1"):
                raise ValueError(
                    f"{ctx}: asset {name!r} must be 0 or 1, got {value!r}")
            ownership[name] = int(value)
        inventories.append(AssetInventory(hh_id, source, year, ea_id, ownership))

    return SurveyBundle(visits=visits, households=households,
                        inventories=inventories)


def load_weather(path: str | Path) -> WeatherTable:
    """Load the daily weather file into per-cell date-sorted series.

    Raises:
        DuplicateDateError: more than one row for the same (cell_id, date).
        ValueError: negative precipitation or malformed fields.
    """
    header, rows = textio.read_csv(path)
    _check_header(header, WEATHER_HEADER, str(path))
    by_cell: dict[str, dict[datetime.date, tuple[float, float]]] = {}
    for i, row in enumerate(rows, start=2):
        ctx = f"{path}:{i}"
        if len(row) != len(WEATHER_HEADER):
            raise SchemaError(f"{ctx}: expected {len(WEATHER_HEADER)} fields")
        cell_id, date_s, precip_s, temp_s = row
        date = _parse_date(date_s, ctx)
        precip = _parse_float(precip_s, ctx)
        temp = _parse_float(temp_s, ctx)
        if precip < 0:
            raise ValueError(f"{ctx}: precip_total_mm must be >= 0")
        series = by_cell.setdefault(cell_id, {})
        if date in series:
            raise DuplicateDateError(
                f"{ctx}: duplicate record for cell {cell_id!r} on {date}")
        series[date] = (precip, temp)

    cells: dict[str, WeatherSeries] = {}
    for cell_id, series in by_cell.items():
        dates = sorted(series)
        cells[cell_id] = WeatherSeries(
            dates=np.array(dates, dtype="datetime64[D]"),
            precip=np.array([series[d][0] for d in dates], dtype=np.float64),
            temp=np.array([series[d][1] for d in dates], dtype=np.float64),
        )
    return WeatherTable(cells=cells)


def load_image_features(path: str | Path) -> list[ImageFeatureRecord]:
    """Load precomputed CNN feature rows, split into MS(512) and NL(512).

    Raises:
        DimensionError: a row does not carry exactly 1024 feature columns.
        NonFiniteError: a feature value is NaN or infinite.
    """
    header, rows = textio.read_csv(path)
    if header[:3] != FEATURES_HEADER[:3]:
        raise SchemaError(
            f"{path}: header must start with {FEATURES_HEADER[:3]}")
    n_feature_cols = len(header) - 3
    if n_feature_cols != N_IMAGE_FEATURES:
        raise DimensionError(
            f"{path}: expected {N_IMAGE_FEATURES} feature columns, "
            f"got {n_feature_cols}")
    if list(header[3:]) != list(IMAGE_FEATURE_NAMES):
        raise SchemaError(f"{path}: feature columns must be "
                          f"f0001..f{N_IMAGE_FEATURES:04d} in order")

    records: list[ImageFeatureRecord] = []
    for i, row in enumerate(rows, start=2):
        ctx = f"{path}:{i}"
        if len(row) != len(header):
            raise DimensionError(
                f"{ctx}: expected {N_IMAGE_FEATURES} feature columns, "
                f"got {len(row) - 3}")
        ea_id, wave_s, visit_s = row[:3]
        wave = _parse_int(wave_s, ctx)
        visit = _parse_visit(visit_s, ctx)
        values = np.array([_parse_float(v, ctx) for v in row[3:]],
                          dtype=np.float64)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NonFiniteError(
                f"{ctx}: non-finite value in column {IMAGE_FEATURE_NAMES[bad]}")
        records.append(ImageFeatureRecord(
            ea_id, wave, visit,
            ms_features=values[:N_MS_FEATURES].copy(),
            nl_features=values[N_MS_FEATURES:].copy()))
    return records


def write_image_features(path: str | Path,
                         records: list[ImageFeatureRecord]) -> None:
    """Write feature rows in the canonical features.csv schema."""
    def rows():
        for rec in records:
            values = np.concatenate([rec.ms_features, rec.nl_features])
            yield [rec.ea_id, str(rec.wave), rec.visit.value,
                   *(textio.fmt(v) for v in values)]

    textio.write_csv(path, FEATURES_HEADER, rows())
