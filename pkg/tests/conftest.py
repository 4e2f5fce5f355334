import pytest

from welfarecast import synth
from welfarecast.cli import RunConfig


@pytest.fixture(scope="session")
def default_scenario(tmp_path_factory):
    """The full-size default scenario (seed 42) used by the headline tests."""
    out = tmp_path_factory.mktemp("scenario_default")
    config = synth.ScenarioConfig()
    synth.generate_scenario(config, out)
    return config, out


@pytest.fixture(scope="session")
def small_scenario(tmp_path_factory):
    """A fast desk-scale scenario for wiring and CLI tests."""
    out = tmp_path_factory.mktemp("scenario_small")
    config = synth.ScenarioConfig(n_eas=20, households_per_ea=5,
                                  n_dhs_eas=8, seed=7)
    synth.generate_scenario(config, out)
    return config, out


def run_config(scenario_dir, out_dir, **overrides) -> RunConfig:
    kwargs = dict(
        visits_file=str(scenario_dir / "visits.csv"),
        households_file=str(scenario_dir / "households.csv"),
        assets_file=str(scenario_dir / "assets.csv"),
        weather_file=str(scenario_dir / "weather.csv"),
        features_file=str(scenario_dir / "features.csv"),
        out_dir=str(out_dir),
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)
