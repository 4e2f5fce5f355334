import filecmp

import numpy as np
import pytest

from welfarecast import cli, gridmap, regress, textio
from welfarecast.errors import ConfigError, MissingBlockError

from conftest import run_config


RUN_ARTIFACTS = ("targets.csv", "weather_features.csv", "model.json",
                 "cv_table.csv", "performance.csv", "wss_tss.csv", "ecdf.csv")


def write_run_config(path, scenario_dir, out_dir, *, skip=(), **extra):
    keys = {
        "visits_file": scenario_dir / "visits.csv",
        "households_file": scenario_dir / "households.csv",
        "assets_file": scenario_dir / "assets.csv",
        "weather_file": scenario_dir / "weather.csv",
        "features_file": scenario_dir / "features.csv",
        "out_dir": out_dir,
        "target": "consumption",
        "features": "ms,nl,weather",
        "folds": "3",
        "seed": "0",
        "lambda_grid": "0.01,1.0,100.0",
    }
    keys.update(extra)
    lines = [f"{k}={v}" for k, v in keys.items() if k not in skip]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_synth_command_writes_scenario(tmp_path):
    cfg_file = tmp_path / "scenario.cfg"
    cfg_file.write_text("n_eas=5\nhouseholds_per_ea=3\nn_dhs_eas=2\n",
                        encoding="utf-8")
    rc = cli.main(["synth", "--config", str(cfg_file), "--seed", "3",
                   "--out", str(tmp_path / "scn")])
    assert rc == 0
    for name in ("visits.csv", "households.csv", "assets.csv", "weather.csv",
                 "features.csv", "truth.json"):
        assert (tmp_path / "scn" / name).exists()


def test_run_end_to_end(tmp_path, small_scenario):
    _, scen = small_scenario
    out = tmp_path / "out"
    cfg = write_run_config(tmp_path / "run.cfg", scen, out)
    assert cli.main(["run", "--config", str(cfg)]) == 0
    for name in RUN_ARTIFACTS:
        assert (out / name).exists(), name
    # no stray staging directories left behind
    assert not [p for p in out.iterdir() if p.name.startswith(".stage-")]


def test_missing_weather_file_maps_to_missing_block_exit_code(
        tmp_path, small_scenario):
    _, scen = small_scenario
    cfg = write_run_config(tmp_path / "run.cfg", scen, tmp_path / "out",
                           skip=("weather_file",))
    rc = cli.main(["run", "--config", str(cfg)])
    assert rc == MissingBlockError.exit_code
    assert not (tmp_path / "out" / "model.json").exists()


def test_identical_runs_are_byte_identical(tmp_path, small_scenario):
    _, scen = small_scenario
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    cfg1 = write_run_config(tmp_path / "r1.cfg", scen, out1)
    cfg2 = write_run_config(tmp_path / "r2.cfg", scen, out2)
    assert cli.main(["run", "--config", str(cfg1)]) == 0
    assert cli.main(["run", "--config", str(cfg2)]) == 0
    for name in RUN_ARTIFACTS:
        assert filecmp.cmp(out1 / name, out2 / name, shallow=False), name


def test_train_evaluate_diagnostics(tmp_path, small_scenario):
    _, scen = small_scenario
    out = tmp_path / "out"
    cfg = write_run_config(tmp_path / "run.cfg", scen, out, target="asset")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert (out / "model.json").exists()
    assert (out / "cv_table.csv").exists()

    assert cli.main(["evaluate", "--model", str(out / "model.json"),
                     "--config", str(cfg), "--out", str(tmp_path / "ev")]) == 0
    header, rows = textio.read_csv(tmp_path / "ev" / "performance.csv")
    assert rows[0][0] == "ridge-eval"
    assert float(rows[0][3]) > 0.5  # in-sample fit on a real signal

    assert cli.main(["diagnostics", "--config", str(cfg),
                     "--out", str(tmp_path / "di")]) == 0
    assert (tmp_path / "di" / "wss_tss.csv").exists()
    assert (tmp_path / "di" / "ecdf.csv").exists()


def test_predict_grid_command(tmp_path, small_scenario):
    _, scen = small_scenario
    out = tmp_path / "out"
    cfg = write_run_config(tmp_path / "run.cfg", scen, out,
                           features="weather")
    assert cli.main(["train", "--config", str(cfg)]) == 0

    spec = gridmap.GridSpec(lat_min=9.0, lat_max=9.5, lon_min=7.0,
                            lon_max=7.5, cell_size=0.1)
    rng = np.random.default_rng(5)
    names = regress.feature_names_for(["weather"])
    rows = []
    for cell in gridmap.make_grid(spec):
        if cell.row == 2 and cell.col == 3:
            continue  # leave one cell without features
        clat, clon = cell.centroid
        for period in ("2010", "2012"):
            rows.append([textio.fmt(clon), textio.fmt(clat), period,
                         *(textio.fmt(v) for v in rng.standard_normal(48))])
    fdir = tmp_path / "gridfeat"
    fdir.mkdir()
    textio.write_csv(fdir / "grid_features.csv",
                     ["lon", "lat", "period", *names], rows)

    raster = tmp_path / "raster.csv"
    rc = cli.main(["predict-grid", "--model", str(out / "model.json"),
                   "--bbox", "9.0,7.0,9.5,7.5", "--cell", "0.1",
                   "--period", "2010", "--period", "2012",
                   "--features-dir", str(fdir), "--out", str(raster)])
    assert rc == 0
    parsed = gridmap.read_raster(raster)
    assert len(parsed) == 25 * 2
    missing = [r for r in parsed if r[3] is None]
    assert len(missing) == 2  # the held-out cell, once per period


def test_bad_config_key_exits_with_config_code(tmp_path, small_scenario):
    _, scen = small_scenario
    cfg = write_run_config(tmp_path / "run.cfg", scen, tmp_path / "out",
                           nonsense="1")
    assert cli.main(["run", "--config", str(cfg)]) == ConfigError.exit_code


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "welfarecast" in capsys.readouterr().out
