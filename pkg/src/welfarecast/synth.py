"""Seeded synthetic scenarios with controllable signal structure.

The generator mimics the qualitative data-generating process the pipeline
targets: a slow-moving per-area wealth latent drives asset ownership and
the image features, while consumption additionally moves with a functional
of the exact 180-day weather history and idiosyncratic noise. Variance
shares for the three consumption components are configurable, so the
achievable R-squared of each feature set is known by construction and can
anchor property-based tests.

Everything is drawn from a single seeded generator in a fixed order, so a
given configuration always produces byte-identical files.
"""

from __future__ import annotations

import datetime
import json
import math
from dataclasses import dataclass, fields, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import (
    HOUSEHOLDS_HEADER,
    VISITS_HEADER,
    WEATHER_HEADER,
    Visit,
    WeatherSeries,
    WeatherTable,
)
from .weather import build_weather_features, nearest_cell_id
from . import textio

WAVE_YEARS = (2010, 2012, 2015, 2018)
DHS_YEARS = (2008, 2013, 2018)

ASSET_NAMES = (
    "bed", "bicycle", "car", "cart", "chair", "fan", "fridge", "generator",
    "iron", "lamp", "mattress", "motorcycle", "phone", "plough", "pump",
    "radio", "sewing_machine", "stove", "table", "tv",
)

# Bounding box loosely matching an agrarian West African country.
LAT_RANGE = (4.5, 13.5)
LON_RANGE = (3.0, 14.5)

ASSET_SLOPE = 1.6
TEMP_BASE_C = 26.0
TEMP_SEASONAL_AMPLITUDE_C = 4.0
TEMP_NOISE_C = 1.5
PRECIP_GAMMA_SHAPE = 0.8
WEATHER_LEAD_DAYS = 200  # generated history before the earliest end date


@dataclass(frozen=True)
class ScenarioConfig:
    n_eas: int = 150
    households_per_ea: int = 10
    waves: int = 4
    visits_per_wave: int = 2
    share_asset: float = 0.45
    share_weather: float = 0.30
    share_noise: float = 0.25
    image_noise: float = 0.10
    weather_nonlinearity: float = 0.0
    n_assets: int = 20
    n_dhs_eas: int = 60
    household_noise: float = 0.25
    coordinate_jitter_km: float = 0.0
    seed: int = 42

    def validate(self) -> None:
        for name in ("n_eas", "households_per_ea", "waves", "visits_per_wave",
                     "n_assets", "n_dhs_eas"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.waves > len(WAVE_YEARS):
            raise ConfigError(f"waves must be <= {len(WAVE_YEARS)}")
        if self.visits_per_wave > 2:
            raise ConfigError("visits_per_wave must be 1 or 2")
        if self.n_assets > len(ASSET_NAMES):
            raise ConfigError(f"n_assets must be <= {len(ASSET_NAMES)}")
        shares = (self.share_asset, self.share_weather, self.share_noise)
        if any(s < 0 for s in shares):
            raise ConfigError("variance shares must be >= 0")
        if sum(shares) > 1.0 + 1e-12:
            raise ConfigError("variance shares must sum to <= 1")
        if not 0.0 <= self.image_noise < 1.0:
            raise ConfigError("image_noise must be in [0, 1)")
        if not 0.0 <= self.weather_nonlinearity <= 1.0:
            raise ConfigError("weather_nonlinearity must be in [0, 1]")
        if self.household_noise < 0:
            raise ConfigError("household_noise must be >= 0")
        if self.coordinate_jitter_km < 0:
            raise ConfigError("coordinate_jitter_km must be >= 0")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ScenarioConfig":
        """Build from flat key=value text, with type coercion per field."""
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown scenario config key {key!r}")
            caster = int if known[key] == "int" else float
            try:
                kwargs[key] = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class ScenarioTruth:
    """Population R-squared ceilings implied by the variance shares."""

    consumption_full: float
    consumption_image_only: float
    consumption_weather_only: float
    asset_latent_share: float
    noise_share: float


def scenario_truth(config: ScenarioConfig) -> ScenarioTruth:
    """Analytic upper bounds on held-out R-squared for each feature set.

    The consumption target is built as an exact share decomposition, so a
    model seeing only the image-visible latent can explain at most the
    asset share, one seeing only weather at most the weather share, and
    any model at most 1 minus the noise share.
    """
    config.validate()
    return ScenarioTruth(
        consumption_full=config.share_asset + config.share_weather,
        consumption_image_only=config.share_asset,
        consumption_weather_only=config.share_weather,
        asset_latent_share=config.share_asset,
        noise_share=config.share_noise,
    )


def parse_kv_file(path) -> dict[str, str]:
    """Parse a flat key=value config file (blank lines and # comments ok)."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping


def _standardize(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd == 0:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def visit_end_date(wave: int, visit: Visit) -> datetime.date:
    """Fixed survey calendar: post-planting in September of the wave year,
    post-harvest the following February."""
    year = WAVE_YEARS[wave - 1]
    if visit is Visit.POST_PLANTING:
        return datetime.date(year, 9, 15)
    return datetime.date(year + 1, 2, 15)


def _generate_weather(rng: np.random.Generator, cell_ids: list[str],
                      start: datetime.date, stop: datetime.date,
                      ) -> WeatherTable:
    """Daily series per cell over [start, stop]; all cells share the same
    seasonal climate so almost all weather variance is within-area."""
    dates = np.arange(np.datetime64(start), np.datetime64(stop)
                      + np.timedelta64(1, "D"), dtype="datetime64[D]")
    doy = (dates - dates.astype("datetime64[Y]")).astype(np.int64)
    n = dates.size
    temp_season = TEMP_BASE_C + TEMP_SEASONAL_AMPLITUDE_C * np.sin(
        2.0 * np.pi * (doy - 120) / 365.25)
    precip_scale = 6.0 * (1.0 + np.sin(2.0 * np.pi * (doy - 150) / 365.25)) + 0.5

    cells = {}
    for cell_id in sorted(set(cell_ids)):
        temp = temp_season + TEMP_NOISE_C * rng.standard_normal(n)
        precip = rng.gamma(PRECIP_GAMMA_SHAPE, precip_scale)
        cells[cell_id] = WeatherSeries(dates=dates.copy(),
                                       precip=precip, temp=temp)
    return WeatherTable(cells=cells)


@dataclass
class ScenarioComponents:
    """True latent structure behind one generated scenario (for oracles).

    ``lat``/``lon`` are the published coordinates (displaced when
    ``coordinate_jitter_km`` > 0); ``true_lat``/``true_lon`` are the
    locations that actually drive the weather functional.
    """

    config: ScenarioConfig
    ea_ids: list[str]
    lat: np.ndarray
    lon: np.ndarray
    true_lat: np.ndarray
    true_lon: np.ndarray
    cell_ids: list[str]
    asset_latent: np.ndarray        # per EA, standardized
    visit_rows: list[tuple[int, int, Visit, datetime.date]]
    weather_table: WeatherTable
    weather_effect: np.ndarray      # per visit row, standardized
    noise: np.ndarray               # per visit row, standardized
    consumption: np.ndarray         # per visit row
    rng: np.random.Generator        # positioned after the latent draws

    @property
    def ea_of_row(self) -> np.ndarray:
        return np.array([row[0] for row in self.visit_rows])


def scenario_components(config: ScenarioConfig) -> ScenarioComponents:
    """Draw the latent structure of a scenario without writing any files."""
    config.validate()
    rng = np.random.default_rng(config.seed)

    n_eas = config.n_eas
    ea_ids = [f"ea{i:04d}" for i in range(n_eas)]
    true_lat = rng.uniform(*LAT_RANGE, n_eas)
    true_lon = rng.uniform(*LON_RANGE, n_eas)
    cell_ids = [nearest_cell_id(true_lat[i], true_lon[i])
                for i in range(n_eas)]

    if config.coordinate_jitter_km > 0:
        # Privacy-style displacement: uniform direction, distance up to the
        # configured radius. Published coordinates (and hence the weather
        # cell the pipeline looks up) drift; the true cell keeps driving
        # the consumption signal.
        radius = config.coordinate_jitter_km * rng.random(n_eas)
        angle = 2.0 * np.pi * rng.random(n_eas)
        lat = true_lat + radius * np.cos(angle) / 111.32
        lon = true_lon + radius * np.sin(angle) / (
            111.32 * np.cos(np.radians(true_lat)))
    else:
        lat = true_lat
        lon = true_lon

    asset_latent = _standardize(rng.standard_normal(n_eas))

    visit_kinds = (Visit.POST_PLANTING,
                   Visit.POST_HARVEST)[:config.visits_per_wave]
    visit_rows = []  # (ea_index, wave, visit, end_date)
    for i in range(n_eas):
        for wave in range(1, config.waves + 1):
            for visit in visit_kinds:
                visit_rows.append((i, wave, visit, visit_end_date(wave, visit)))
    n_obs = len(visit_rows)

    end_dates = [row[3] for row in visit_rows]
    published_cells = [nearest_cell_id(lat[i], lon[i]) for i in range(n_eas)]
    weather_table = _generate_weather(
        rng, cell_ids + published_cells,
        min(end_dates) - datetime.timedelta(days=WEATHER_LEAD_DAYS),
        max(end_dates))

    # Weather functional: a fixed linear combination of the same 48
    # quintile features the pipeline extracts, hence learnable by design.
    weather_coef = rng.standard_normal(48)
    quintile_rows = np.empty((n_obs, 48))
    for r, (i, wave, visit, end) in enumerate(visit_rows):
        vec = build_weather_features(weather_table, cell_ids[i], end)
        quintile_rows[r] = vec.values
    col_sd = quintile_rows.std(axis=0)
    col_sd[col_sd == 0.0] = 1.0
    standardized_q = (quintile_rows - quintile_rows.mean(axis=0)) / col_sd
    weather_effect = _standardize(standardized_q @ weather_coef)
    if config.weather_nonlinearity > 0:
        bent = _standardize(weather_effect ** 2)
        kappa = config.weather_nonlinearity
        weather_effect = _standardize((1 - kappa) * weather_effect
                                      + kappa * bent)

    noise = _standardize(rng.standard_normal(n_obs))
    ea_of_row = np.array([row[0] for row in visit_rows])
    consumption = (math.sqrt(config.share_asset) * asset_latent[ea_of_row]
                   + math.sqrt(config.share_weather) * weather_effect
                   + math.sqrt(config.share_noise) * noise)
    return ScenarioComponents(
        config=config, ea_ids=ea_ids, lat=lat, lon=lon,
        true_lat=true_lat, true_lon=true_lon, cell_ids=cell_ids,
        asset_latent=asset_latent, visit_rows=visit_rows,
        weather_table=weather_table, weather_effect=weather_effect,
        noise=noise, consumption=consumption, rng=rng)


def generate_scenario(config: ScenarioConfig, out_dir) -> dict[str, Path]:
    """Emit visits/households/assets/weather/features CSVs plus truth.json.

    Returns a name -> path mapping for the written files.
    """
    parts = scenario_components(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = parts.rng
    n_eas = config.n_eas
    ea_ids = parts.ea_ids
    lat, lon = parts.lat, parts.lon
    visit_rows = parts.visit_rows
    weather_table = parts.weather_table
    asset_latent = parts.asset_latent
    consumption = parts.consumption
    n_obs = len(visit_rows)
    ea_of_row = parts.ea_of_row

    paths: dict[str, Path] = {}

    # visits.csv
    rows = []
    for i, wave, visit, end in visit_rows:
        rows.append([ea_ids[i], str(wave), visit.value, end.isoformat(),
                     textio.fmt(lat[i]), textio.fmt(lon[i])])
    paths["visits"] = out_dir / "visits.csv"
    textio.write_csv(paths["visits"], VISITS_HEADER, rows)

    # households.csv: fixed panel of households, per-visit expenditure noise
    sizes = rng.integers(1, 9, size=(n_eas, config.households_per_ea))
    rows = []
    sigma = config.household_noise
    for r, (i, wave, visit, end) in enumerate(visit_rows):
        shocks = rng.standard_normal(config.households_per_ea)
        eta = np.exp(sigma * shocks - 0.5 * sigma * sigma)
        per_capita = math.exp(consumption[r]) * eta
        for h in range(config.households_per_ea):
            hh_id = f"hh{i:04d}_{h:02d}"
            total = per_capita[h] * sizes[i, h]
            rows.append([hh_id, ea_ids[i], str(wave), visit.value,
                         textio.fmt(total), str(sizes[i, h])])
    paths["households"] = out_dir / "households.csv"
    textio.write_csv(paths["households"], HOUSEHOLDS_HEADER, rows)

    # assets.csv: GHS panel inventories per wave plus DHS cross-sections
    asset_names = ASSET_NAMES[:config.n_assets]
    offsets = np.linspace(-1.2, 1.2, config.n_assets)
    header = ["hh_id", "source", "survey_year", "ea_id", *asset_names]
    rows = []
    for wave in range(1, config.waves + 1):
        year = WAVE_YEARS[wave - 1]
        for i in range(n_eas):
            probs = _sigmoid(offsets + ASSET_SLOPE * asset_latent[i])
            draws = rng.random((config.households_per_ea, config.n_assets))
            owned = (draws < probs).astype(int)
            for h in range(config.households_per_ea):
                rows.append([f"hh{i:04d}_{h:02d}", "GHS", str(year),
                             ea_ids[i], *map(str, owned[h])])
    for year in DHS_YEARS:
        for d in range(config.n_dhs_eas):
            latent = rng.standard_normal()
            probs = _sigmoid(offsets + ASSET_SLOPE * latent)
            draws = rng.random((config.households_per_ea, config.n_assets))
            owned = (draws < probs).astype(int)
            for h in range(config.households_per_ea):
                rows.append([f"dhshh{year}_{d:04d}_{h:02d}", "DHS", str(year),
                             f"dhsea{d:04d}", *map(str, owned[h])])
    paths["assets"] = out_dir / "assets.csv"
    textio.write_csv(paths["assets"], header, rows)

    # weather.csv, cell-major then date-major
    rows = []
    for cell_id in sorted(weather_table.cells):
        series = weather_table.cells[cell_id]
        for j in range(series.dates.size):
            rows.append([cell_id, str(series.dates[j]),
                         textio.fmt(series.precip[j]),
                         textio.fmt(series.temp[j])])
    paths["weather"] = out_dir / "weather.csv"
    textio.write_csv(paths["weather"], WEATHER_HEADER, rows)

    # features.csv: each feature is the wealth latent scaled by a fixed
    # loading plus per-observation noise with variance share image_noise.
    loadings = rng.standard_normal(1024)
    noise_scale = abs(loadings) * math.sqrt(
        config.image_noise / (1.0 - config.image_noise))
    feature_rows = (asset_latent[ea_of_row][:, None] * loadings[None, :]
                    + rng.standard_normal((n_obs, 1024)) * noise_scale[None, :])
    header = ["ea_id", "wave", "visit",
              *(f"f{k:04d}" for k in range(1, 1025))]
    rows = []
    for r, (i, wave, visit, end) in enumerate(visit_rows):
        rows.append([ea_ids[i], str(wave), visit.value,
                     *(textio.fmt(v) for v in feature_rows[r])])
    paths["features"] = out_dir / "features.csv"
    textio.write_csv(paths["features"], header, rows)

    truth = scenario_truth(config)
    paths["truth"] = out_dir / "truth.json"
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump({"config": asdict(config), "max_r2": asdict(truth)},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
