"""Command-line entry point: synth, train, evaluate, predict-grid,
diagnostics, and the full run pipeline.

Configuration comes from a flat key=value file with CLI-flag overrides.
Logs go to stderr and data only to files. Outputs are written to a staging
directory and promoted at the end, so a failed run never leaves partial
artifacts behind. Every library error maps to its own exit code (see
``--help``); unexpected exceptions exit 1 and invalid values exit 3.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, diagnose, gridmap, regress, synth, textio
from .errors import (
    ConfigError,
    ConfigMismatchError,
    IoError,
    MissingBlockError,
    WelfarecastError,
    exit_code_table,
)
from .ingest import (
    ImageFeatureRecord,
    Visit,
    VisitKey,
    load_image_features,
    load_survey_bundle,
    load_weather,
)
from .regress import DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID
from .weather import (
    DEFAULT_MIN_DAYS_PER_WINDOW,
    WeatherFeatureVector,
    build_weather_features,
    nearest_cell_id,
    write_weather_features,
)
from .welfare import (
    TargetKind,
    asset_index_targets,
    build_pooled_asset_matrix,
    consumption_targets,
    fit_asset_index,
    write_targets,
)

logger = logging.getLogger(__name__)

TARGET_CHOICES = {"asset": TargetKind.ASSET_INDEX,
                  "consumption": TargetKind.LOG_PC_CONSUMPTION}

_PATH_KEYS = ("visits_file", "households_file", "assets_file",
              "weather_file", "features_file", "out_dir")


@dataclass
class RunConfig:
    visits_file: str | None = None
    households_file: str | None = None
    assets_file: str | None = None
    weather_file: str | None = None
    features_file: str | None = None
    out_dir: str = "out"
    target: str = "consumption"
    features: tuple[str, ...] = ("ms", "nl", "weather")
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    min_days_per_window: int = DEFAULT_MIN_DAYS_PER_WINDOW

    def validate(self) -> None:
        if self.target not in TARGET_CHOICES:
            raise ConfigError(f"target must be one of {sorted(TARGET_CHOICES)}")
        regress.normalize_blocks(self.features)
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not self.lambda_grid:
            raise ConfigError("lambda grid must be nonempty")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "RunConfig":
        cfg = cls()
        for key, raw in mapping.items():
            if key in _PATH_KEYS:
                setattr(cfg, key, raw)
            elif key == "target":
                cfg.target = raw
            elif key == "features":
                cfg.features = tuple(p for p in raw.split(",") if p)
            elif key in ("folds", "seed", "min_days_per_window"):
                try:
                    setattr(cfg, key, int(raw))
                except ValueError as exc:
                    raise ConfigError(f"bad integer for {key!r}: {raw!r}") from exc
            elif key == "lambda_grid":
                try:
                    cfg.lambda_grid = tuple(float(v) for v in raw.split(","))
                except ValueError as exc:
                    raise ConfigError(f"bad lambda grid: {raw!r}") from exc
            else:
                raise ConfigError(f"unknown run config key {key!r}")
        return cfg


def load_run_config(args) -> RunConfig:
    mapping = synth.parse_kv_file(args.config) if args.config else {}
    cfg = RunConfig.from_mapping(mapping)
    if getattr(args, "target", None):
        cfg.target = args.target
    if getattr(args, "features", None):
        cfg.features = tuple(p for p in args.features.split(",") if p)
    if getattr(args, "folds", None) is not None:
        cfg.folds = args.folds
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


@contextmanager
def staged_outputs(out_dir: str | Path):
    """Write artifacts into a temp directory; promote only on success."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out_dir))
    try:
        yield stage
        for p in sorted(stage.iterdir()):
            os.replace(p, out_dir / p.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


@dataclass
class PipelineData:
    bundle: object
    images: dict[VisitKey, ImageFeatureRecord]
    weather_vecs: dict[VisitKey, WeatherFeatureVector]
    targets: list
    asset_rows: list = field(default_factory=list)
    consumption_rows: list = field(default_factory=list)


def _require_file(path: str | None, label: str) -> str:
    if path is None:
        raise ConfigError(f"run config is missing {label}")
    if not Path(path).exists():
        raise IoError(f"{label} {path!r} does not exist")
    return path


def prepare_data(cfg: RunConfig, need_weather: bool = True) -> PipelineData:
    """Load inputs and construct targets plus per-visit feature blocks."""
    if "weather" in cfg.features:
        if cfg.weather_file is None or not Path(cfg.weather_file).exists():
            raise MissingBlockError(
                "weather feature block enabled but no weather file is "
                f"available (weather_file={cfg.weather_file!r})")
    bundle = load_survey_bundle(
        _require_file(cfg.visits_file, "visits_file"),
        _require_file(cfg.households_file, "households_file"),
        _require_file(cfg.assets_file, "assets_file"))
    images = None
    if "ms" in cfg.features or "nl" in cfg.features:
        records = load_image_features(
            _require_file(cfg.features_file, "features_file"))
        images = {rec.key: rec for rec in records}

    weather_vecs: dict[VisitKey, WeatherFeatureVector] = {}
    if need_weather or "weather" in cfg.features:
        table = load_weather(_require_file(cfg.weather_file, "weather_file"))
        for key in sorted(bundle.visits, key=lambda k: (k[0], k[1], k[2].value)):
            rec = bundle.visits[key]
            cell = nearest_cell_id(rec.lat, rec.lon)
            weather_vecs[key] = build_weather_features(
                table, cell, rec.end_date, cfg.min_days_per_window)

    matrix, names = build_pooled_asset_matrix(bundle.inventories)
    index_model = fit_asset_index(matrix, names)
    asset_rows = asset_index_targets(index_model, bundle.inventories,
                                     bundle.visits)
    consumption_rows = consumption_targets(bundle.households)
    targets = sorted(asset_rows + consumption_rows,
                     key=lambda t: (t.kind.value, t.ea_id, t.wave,
                                    t.visit.value))
    return PipelineData(bundle=bundle, images=images or {},
                        weather_vecs=weather_vecs, targets=targets,
                        asset_rows=asset_rows,
                        consumption_rows=consumption_rows)


def _design_for_target(data: PipelineData, cfg: RunConfig, kind: TargetKind):
    rows = [t for t in data.targets if t.kind is kind]
    keys = [t.visit_key for t in rows]
    design = regress.assemble_design(
        keys,
        data.images if ("ms" in cfg.features or "nl" in cfg.features) else None,
        data.weather_vecs if "weather" in cfg.features else None,
        cfg.features)
    usable = set(design.keys)
    y = np.array([t.value for t in rows if t.visit_key in usable])
    return design, y


def run_pipeline(cfg: RunConfig) -> dict[str, Path]:
    """Full pipeline: ingest, targets, weather features, CV ridge fit,
    diagnostics. Writes the seven run artifacts and returns their paths."""
    cfg.validate()
    data = prepare_data(cfg, need_weather=True)
    kind = TARGET_CHOICES[cfg.target]
    feature_label = "+".join(regress.normalize_blocks(cfg.features))

    design, y = _design_for_target(data, cfg, kind)
    lam, cv_table = regress.cv_select_lambda(
        design, y, cfg.lambda_grid, k=cfg.folds, seed=cfg.seed)
    model = regress.ridge_fit(
        design, y, lam,
        train_metadata={"target": kind.value, "feature_set": feature_label,
                        "folds": cfg.folds, "seed": cfg.seed,
                        "n_rows": int(design.X.shape[0])})
    yhat_in = regress.predict(model, design)
    yhat_out = regress.cv_heldout_predictions(design, y, lam, k=cfg.folds,
                                              seed=cfg.seed)
    reports = [
        diagnose.evaluate("ridge-insample", kind.value, feature_label,
                          y, yhat_in),
        diagnose.evaluate("ridge-heldout", kind.value, feature_label,
                          y, yhat_out),
    ]

    named_ratios, ecdf_points = _variance_diagnostics(data, cfg)

    with staged_outputs(cfg.out_dir) as stage:
        write_targets(stage / "targets.csv", data.targets)
        write_weather_features(
            stage / "weather_features.csv",
            sorted(data.weather_vecs.items(),
                   key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)))
        regress.save_model(model, stage / "model.json")
        regress.write_cv_table(stage / "cv_table.csv", cv_table)
        diagnose.write_performance(stage / "performance.csv", reports)
        diagnose.write_wss_tss(stage / "wss_tss.csv", named_ratios)
        diagnose.write_ecdf(stage / "ecdf.csv", ecdf_points)
    out = Path(cfg.out_dir)
    return {name: out / f"{name}.csv" for name in
            ("targets", "weather_features", "cv_table", "performance",
             "wss_tss", "ecdf")} | {"model": out / "model.json"}


def _variance_diagnostics(data: PipelineData, cfg: RunConfig):
    """Per-feature within/total ratios plus the two target reference rows,
    and the ECDF of the image-feature ratios."""
    design = regress.assemble_design(
        sorted(data.images, key=lambda k: (k[0], k[1], k[2].value))
        if data.images else
        sorted(data.weather_vecs, key=lambda k: (k[0], k[1], k[2].value)),
        data.images or None,
        data.weather_vecs if "weather" in cfg.features else None,
        cfg.features)
    ratios = diagnose.wss_tss_ratio(design.X, design.groups)
    named = list(zip(design.feature_names, (float(r) for r in ratios)))

    for label, rows in (("target_asset_index", data.asset_rows),
                        ("target_log_pc_consumption", data.consumption_rows)):
        if len(rows) >= 2 and len({t.ea_id for t in rows}) >= 2:
            ratio = diagnose.wss_tss_ratio(
                np.array([t.value for t in rows]),
                np.array([t.ea_id for t in rows]))
            named.append((label, float(ratio)))

    image_names = set()
    for block in ("ms", "nl"):
        if block in cfg.features:
            image_names.update(regress.feature_names_for([block]))
    ecdf_source = [r for name, r in named
                   if name in image_names and not math.isnan(r)]
    if not ecdf_source:
        ecdf_source = [r for name, r in named
                       if not name.startswith("target_")
                       and not math.isnan(r)]
    return named, diagnose.ecdf(ecdf_source)


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    mapping = synth.parse_kv_file(args.config) if args.config else {}
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    config = synth.ScenarioConfig.from_mapping(mapping)
    with staged_outputs(args.out) as stage:
        synth.generate_scenario(config, stage)
    logger.info("scenario written to %s", args.out)
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    data = prepare_data(cfg, need_weather="weather" in cfg.features)
    kind = TARGET_CHOICES[cfg.target]
    feature_label = "+".join(regress.normalize_blocks(cfg.features))
    design, y = _design_for_target(data, cfg, kind)
    lam, cv_table = regress.cv_select_lambda(
        design, y, cfg.lambda_grid, k=cfg.folds, seed=cfg.seed)
    model = regress.ridge_fit(
        design, y, lam,
        train_metadata={"target": kind.value, "feature_set": feature_label,
                        "folds": cfg.folds, "seed": cfg.seed,
                        "n_rows": int(design.X.shape[0])})
    with staged_outputs(cfg.out_dir) as stage:
        regress.save_model(model, stage / "model.json")
        regress.write_cv_table(stage / "cv_table.csv", cv_table)
    logger.info("model with lambda=%g written to %s", lam, cfg.out_dir)
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args)
    model = regress.load_model(args.model)
    data = prepare_data(cfg, need_weather="weather" in cfg.features)
    kind = TARGET_CHOICES[cfg.target]
    feature_label = "+".join(regress.normalize_blocks(cfg.features))
    design, y = _design_for_target(data, cfg, kind)
    yhat = regress.predict(model, design)
    report = diagnose.evaluate("ridge-eval", kind.value, feature_label,
                               y, yhat)
    with staged_outputs(cfg.out_dir) as stage:
        diagnose.write_performance(stage / "performance.csv", [report])
    return 0


def cmd_diagnostics(args) -> int:
    cfg = load_run_config(args)
    data = prepare_data(cfg, need_weather="weather" in cfg.features)
    named, ecdf_points = _variance_diagnostics(data, cfg)
    with staged_outputs(cfg.out_dir) as stage:
        diagnose.write_wss_tss(stage / "wss_tss.csv", named)
        diagnose.write_ecdf(stage / "ecdf.csv", ecdf_points)
    return 0


def cmd_run(args) -> int:
    cfg = load_run_config(args)
    run_pipeline(cfg)
    logger.info("pipeline artifacts written to %s", cfg.out_dir)
    return 0


def _parse_grid_features(path: Path, spec: gridmap.GridSpec, period: str):
    """Read grid_features.csv (lon,lat,period,<feature columns>), keyed by
    cell centroid, into the per-cell block mapping predict_grid expects."""
    header, rows = textio.read_csv(path)
    if header[:3] != ["lon", "lat", "period"]:
        raise ConfigMismatchError(
            f"{path}: header must start with lon,lat,period")
    names = header[3:]
    block_names = {b: frozenset(regress.feature_names_for([b]))
                   for b in ("ms", "nl", "weather")}
    blocks_of_col: list[tuple[str, int]] = []
    counters = {"ms": 0, "nl": 0, "weather": 0}
    for name in names:
        for block, known in block_names.items():
            if name in known:
                break
        else:
            raise ConfigMismatchError(f"{path}: unknown feature column {name!r}")
        blocks_of_col.append((block, counters[block]))
        counters[block] += 1
    sizes = {"ms": 512, "nl": 512, "weather": 48}
    for block, count in counters.items():
        if count not in (0, sizes[block]):
            raise ConfigMismatchError(
                f"{path}: feature block {block!r} has {count} of "
                f"{sizes[block]} columns")

    cell_blocks: dict[tuple[int, int], dict[str, np.ndarray]] = {}
    for row in rows:
        if row[2] != period:
            continue
        lon, lat = float(row[0]), float(row[1])
        i = math.floor((lat - spec.lat_min) / spec.cell_size + 1e-9)
        j = math.floor((lon - spec.lon_min) / spec.cell_size + 1e-9)
        if not (0 <= i < spec.n_rows and 0 <= j < spec.n_cols):
            continue
        parts: dict[str, np.ndarray] = {}
        arrays = {b: np.full(sizes[b], np.nan) for b, c in counters.items()
                  if c}
        complete = {b: True for b in arrays}
        for (block, pos), value in zip(blocks_of_col, row[3:]):
            if value == "":
                complete[block] = False
            else:
                arrays[block][pos] = float(value)
        for block, arr in arrays.items():
            if complete[block] and np.all(np.isfinite(arr)):
                parts[block] = arr
        cell_blocks[(i, j)] = parts
    return cell_blocks


def cmd_predict_grid(args) -> int:
    model = regress.load_model(args.model)
    try:
        latmin, lonmin, latmax, lonmax = (float(v) for v in
                                          args.bbox.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad bbox {args.bbox!r}: expected "
                          "latmin,lonmin,latmax,lonmax") from exc
    spec = gridmap.GridSpec(lat_min=latmin, lat_max=latmax, lon_min=lonmin,
                            lon_max=lonmax, cell_size=args.cell)
    spec.validate()
    features_path = Path(args.features_dir) / "grid_features.csv"
    if not features_path.exists():
        raise IoError(f"{features_path} does not exist")
    threads = max(1, int(os.environ.get("WELFARECAST_THREADS", "1")))
    out_path = Path(args.out)
    layers = []
    for period in args.period:
        cell_blocks = _parse_grid_features(features_path, spec, period)
        layers.append(gridmap.predict_grid(
            model, cell_blocks, spec, period,
            target_kind=model.train_metadata.get("target", ""),
            threads=threads))
    with staged_outputs(out_path.parent) as stage:
        gridmap.export_raster(layers, stage / out_path.name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    codes = "\n".join(f"  {code:<4} {name}" for code, name in
                      exit_code_table())
    parser = argparse.ArgumentParser(
        prog="welfarecast",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "input schemas:\n"
            "  visits.csv      ea_id,wave,visit,end_date,lat,lon (visit: PP|PH)\n"
            "  households.csv  hh_id,ea_id,wave,visit,total_expenditure,household_size\n"
            "  assets.csv      hh_id,source,survey_year,ea_id,<asset columns 0/1>\n"
            "  weather.csv     cell_id,date,precip_total_mm,temp_mean_c\n"
            "  features.csv    ea_id,wave,visit,f0001..f1024\n"
            "\nexit codes (errors print one line: 'error: <Type>: <message>'):\n"
            "  1    unexpected failure\n"
            "  2    usage error\n"
            "  3    invalid value in input data\n"
            f"{codes}\n"
            "\nenvironment:\n"
            "  WELFARECAST_THREADS  caps per-cell prediction parallelism\n"))
    parser.add_argument("--version", action="version",
                        version=f"welfarecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--config", help="flat key=value scenario file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    def add_run_opts(p, with_out=True):
        p.add_argument("--config", help="flat key=value run file")
        p.add_argument("--target", choices=sorted(TARGET_CHOICES))
        p.add_argument("--features",
                       help="comma-separated blocks from ms,nl,weather")
        p.add_argument("--folds", type=int)
        p.add_argument("--seed", type=int)
        if with_out:
            p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="fit a ridge model with CV shrinkage")
    add_run_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    add_run_opts(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnostics",
                       help="within/total variance ratios and their ECDF")
    add_run_opts(p)
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("predict-grid",
                       help="evaluate a model over a grid of cells")
    p.add_argument("--model", required=True)
    p.add_argument("--bbox", required=True,
                   help="latmin,lonmin,latmax,lonmax in decimal degrees")
    p.add_argument("--cell", type=float, default=0.1)
    p.add_argument("--period", action="append", required=True,
                   help="period label (repeatable)")
    p.add_argument("--features-dir", required=True,
                   help="directory holding grid_features.csv")
    p.add_argument("--out", required=True, help="output raster CSV path")
    p.set_defaults(func=cmd_predict_grid)

    p = sub.add_parser("run", help="full pipeline: all seven artifacts")
    add_run_opts(p)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WelfarecastError as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: ValueError: {message}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return IoError.exit_code


if __name__ == "__main__":
    sys.exit(main())
