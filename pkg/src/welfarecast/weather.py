"""Monthly weather-quintile features for a survey end date.

A "month" here is a fixed 30-day window counted back from the end date, so
six windows tile exactly 180 days with no gaps or overlap. For each window
and each variable (precipitation, temperature) the four interior quintile
cut points (p = 0.2, 0.4, 0.6, 0.8) of the daily values are computed with
the R-7 linear-interpolation rule, giving a 48-value vector.

Vector layout: index = v*24 + (w-1)*4 + (q-1) with v in {0: precip, 1: temp},
window w in 1..6 (1 = most recent), quantile q in 1..4.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySeriesError, InsufficientCoverageError
from .ingest import WeatherSeries, WeatherTable, VisitKey
from . import textio

QUANTILE_LEVELS = (0.2, 0.4, 0.6, 0.8)
N_WINDOWS = 6
WINDOW_DAYS = 30
VARIABLES = ("precip", "temp")
N_FEATURES = len(VARIABLES) * N_WINDOWS * len(QUANTILE_LEVELS)

WEATHER_FEATURE_NAMES = tuple(f"w{i:02d}" for i in range(1, N_FEATURES + 1))
WEATHER_FEATURES_HEADER = ["ea_id", "wave", "visit", *WEATHER_FEATURE_NAMES]

DEFAULT_MIN_DAYS_PER_WINDOW = 25


@dataclass(frozen=True)
class WeatherFeatureVector:
    """48 monthly-quintile values in the documented layout."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} values, "
                             f"got shape {self.values.shape}")

    def block(self, variable: int, window: int) -> np.ndarray:
        """The four quantiles for one (variable, window) pair."""
        start = variable * 24 + (window - 1) * 4
        return self.values[start:start + 4]


def feature_index(variable: int, window: int, quantile: int) -> int:
    """Flat index for variable v in {0,1}, window 1..6, quantile 1..4."""
    return variable * 24 + (window - 1) * 4 + (quantile - 1)


def window_days(end_date: datetime.date, w: int) -> tuple[datetime.date,
                                                          datetime.date]:
    """Half-open 30-day date range [end - 30w, end - 30(w-1)) for window w."""
    if not 1 <= w <= N_WINDOWS:
        raise ValueError(f"window must be in 1..{N_WINDOWS}, got {w}")
    start = end_date - datetime.timedelta(days=WINDOW_DAYS * w)
    stop = end_date - datetime.timedelta(days=WINDOW_DAYS * (w - 1))
    return start, stop


def empirical_quintiles(values) -> np.ndarray:
    """Quintile cut points at p = .2, .4, .6, .8 (R-7 interpolation).

    With n sorted values the cut point at level p sits at rank
    h = (n-1)p + 1; fractional ranks interpolate linearly between the two
    neighbouring order statistics.

    Raises:
        EmptySeriesError: the series is empty.
        ValueError: a value is NaN or infinite.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.ravel()
    n = arr.size
    if n == 0:
        raise EmptySeriesError("cannot compute quintiles of an empty series")
    if not np.all(np.isfinite(arr)):
        raise ValueError("series contains non-finite values")
    a = np.sort(arr)
    out = np.empty(len(QUANTILE_LEVELS), dtype=np.float64)
    for i, p in enumerate(QUANTILE_LEVELS):
        g = (n - 1) * p
        j = math.floor(g)
        gamma = g - j
        hi = min(j + 1, n - 1)
        out[i] = a[j] + gamma * (a[hi] - a[j])
    return out


def build_weather_features(
    table: WeatherTable,
    cell_id: str,
    end_date: datetime.date,
    min_days_per_window: int = DEFAULT_MIN_DAYS_PER_WINDOW,
) -> WeatherFeatureVector:
    """Assemble the 48-value quintile vector for one cell and end date.

    Each of the six windows must contain at least ``min_days_per_window``
    daily records for both variables; anything less raises
    :class:`InsufficientCoverageError` naming the deficient window. Missing
    days are never imputed.
    """
    series = table.cells.get(cell_id)
    if series is None:
        series = WeatherSeries(dates=np.array([], dtype="datetime64[D]"),
                               precip=np.array([], dtype=np.float64),
                               temp=np.array([], dtype=np.float64))

    values = np.empty(N_FEATURES, dtype=np.float64)
    for w in range(1, N_WINDOWS + 1):
        start, stop = window_days(end_date, w)
        i0 = int(np.searchsorted(series.dates, np.datetime64(start)))
        i1 = int(np.searchsorted(series.dates, np.datetime64(stop)))
        n_days = i1 - i0
        for v, column in enumerate((series.precip, series.temp)):
            if n_days < min_days_per_window:
                raise InsufficientCoverageError(
                    f"cell {cell_id!r}: window {w} ({start}..{stop}) has "
                    f"{n_days} days of {VARIABLES[v]} data, "
                    f"need {min_days_per_window}",
                    window=w, variable=VARIABLES[v])
            q = empirical_quintiles(column[i0:i1])
            values[feature_index(v, w, 1):feature_index(v, w, 4) + 1] = q
    return WeatherFeatureVector(values=values)


def nearest_cell_id(lat: float, lon: float, cell_size: float = 0.25) -> str:
    """Identifier of the weather grid cell whose center is nearest (lat, lon).

    Cell centers sit on multiples of ``cell_size`` degrees.
    """
    clat = round(lat / cell_size) * cell_size
    clon = round(lon / cell_size) * cell_size
    return f"{clat:.2f}_{clon:.2f}"


def write_weather_features(path, rows: list[tuple[VisitKey,
                                                  WeatherFeatureVector]]) -> None:
    """Write per-visit feature vectors in the weather_features.csv schema."""
    def lines():
        for (ea_id, wave, visit), vec in rows:
            yield [ea_id, str(wave), visit.value,
                   *(textio.fmt(v) for v in vec.values)]

    textio.write_csv(path, WEATHER_FEATURES_HEADER, lines())
