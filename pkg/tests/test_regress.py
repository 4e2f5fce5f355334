import json

import numpy as np
import pytest

from welfarecast import regress
from welfarecast.errors import (
    MissingBlockError,
    MissingFeatureError,
    SingularSystemError,
    TooFewGroupsError,
)
from welfarecast.ingest import ImageFeatureRecord, Visit
from welfarecast.weather import WeatherFeatureVector

import oracles


def image_record(rng):
    return ImageFeatureRecord("ea1", 1, Visit.POST_PLANTING,
                              rng.standard_normal(512),
                              rng.standard_normal(512))


def weather_vec(rng):
    return WeatherFeatureVector(values=np.sort(rng.standard_normal(48)))


def random_problem(rng, n=50, p=10, collinear=False):
    x = rng.standard_normal((n, p)) * rng.uniform(0.5, 3.0, p)
    if collinear:
        x[:, -1] = x[:, 0] * 2.0
    beta = rng.standard_normal(p)
    y = x @ beta + rng.standard_normal(n)
    return x, y


# -- fusion --------------------------------------------------------------------

def test_weather_only_row_length():
    rng = np.random.default_rng(41)
    row = regress.fuse_features(None, weather_vec(rng), ["weather"])
    assert row.shape == (48,)


def test_full_fusion_length_and_order():
    rng = np.random.default_rng(42)
    image = image_record(rng)
    wvec = weather_vec(rng)
    row = regress.fuse_features(image, wvec, ["weather", "nl", "ms"])
    assert row.shape == (1072,)
    assert np.array_equal(row[:512], image.ms_features)
    assert np.array_equal(row[512:1024], image.nl_features)
    assert np.array_equal(row[1024:], wvec.values)


def test_missing_block_raises():
    rng = np.random.default_rng(43)
    with pytest.raises(MissingBlockError):
        regress.fuse_features(None, weather_vec(rng), ["ms"])
    with pytest.raises(MissingBlockError):
        regress.fuse_features(image_record(rng), None, ["ms", "weather"])


def test_unknown_block_rejected():
    with pytest.raises(ValueError):
        regress.normalize_blocks(["ms", "imagery"])


# -- ridge fit -----------------------------------------------------------------

def test_huge_lambda_shrinks_to_mean():
    rng = np.random.default_rng(44)
    x, y = random_problem(rng)
    model = regress.ridge_fit(x, y, 1e12)
    assert np.max(np.abs(model.coefficients)) < 1e-6
    preds = regress.predict(model, x)
    assert np.max(np.abs(preds - y.mean())) < 1e-6


def test_one_feature_closed_form():
    x = np.array([[-1.0], [0.0], [1.0]])
    y = np.array([-1.0, 0.0, 1.0])
    lam = 0.7
    model = regress.ridge_fit(x, y, lam)
    s = x.std()  # population stdev of the single column
    z = x[:, 0] / s
    expected = float(z @ y) / (float(z @ z) + lam)
    assert model.coefficients[0] == pytest.approx(expected, abs=1e-12)
    assert model.intercept == 0.0


def test_matches_gradient_descent_oracle():
    rng = np.random.default_rng(45)
    for _ in range(10):
        x, y = random_problem(rng)
        lam = float(rng.choice([1e-3, 0.1, 1.0, 10.0, 1e3]))
        model = regress.ridge_fit(x, y, lam)
        z = (x - x.mean(axis=0)) / x.std(axis=0)
        ref = oracles.gradient_descent_ridge(z, y - y.mean(), lam)
        assert np.max(np.abs(model.coefficients - ref)) < 1e-8


def test_singular_at_lambda_zero_with_collinear_columns():
    rng = np.random.default_rng(46)
    x, y = random_problem(rng, collinear=True)
    with pytest.raises(SingularSystemError):
        regress.ridge_fit(x, y, 0.0)
    regress.ridge_fit(x, y, 1e-6)  # tiny ridge restores definiteness


def test_zero_variance_column_gets_zero_coefficient():
    rng = np.random.default_rng(47)
    x, y = random_problem(rng, p=4)
    x[:, 2] = 5.0
    model = regress.ridge_fit(x, y, 1.0)
    assert model.coefficients[2] == 0.0
    preds = regress.predict(model, x)
    assert np.all(np.isfinite(preds))


def test_feature_scaling_leaves_predictions_unchanged():
    rng = np.random.default_rng(48)
    x, y = random_problem(rng)
    model = regress.ridge_fit(x, y, 3.0)
    base = regress.predict(model, x)
    scaled = x.copy()
    scaled[:, 3] *= 41.0
    model2 = regress.ridge_fit(scaled, y, 3.0)
    other = regress.predict(model2, scaled)
    assert np.max(np.abs(base - other)) < 1e-8


def test_monotone_shrinkage():
    rng = np.random.default_rng(49)
    for _ in range(5):
        x, y = random_problem(rng)
        norms = [np.linalg.norm(regress.ridge_fit(x, y, lam).coefficients)
                 for lam in (0.01, 0.1, 1.0, 10.0, 100.0)]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


# -- prediction ------------------------------------------------------------------

def test_row_at_training_means_predicts_intercept():
    rng = np.random.default_rng(50)
    x, y = random_problem(rng)
    model = regress.ridge_fit(x, y, 2.0)
    at_means = x.mean(axis=0)[None, :]
    assert regress.predict(model, at_means)[0] == pytest.approx(
        model.intercept, abs=1e-12)


def test_predictions_match_matrix_arithmetic():
    rng = np.random.default_rng(51)
    x, y = random_problem(rng)
    model = regress.ridge_fit(x, y, 0.5)
    z = (x - model.means) / model.stdevs
    expected = model.intercept + z @ model.coefficients
    assert np.allclose(regress.predict(model, x), expected, atol=1e-12)


def test_predict_aligns_features_by_name():
    rng = np.random.default_rng(52)
    x, y = random_problem(rng, p=3)
    model = regress.ridge_fit(x, y, 1.0, feature_names=("a", "b", "c"))
    base = regress.predict(model, x)
    reordered = regress.predict(model, x[:, [2, 0, 1]],
                                feature_names=("c", "a", "b"))
    assert np.allclose(base, reordered)
    with pytest.raises(MissingFeatureError):
        regress.predict(model, x[:, :2], feature_names=("a", "b"))


# -- cross-validation --------------------------------------------------------------

def grouped_problem(rng, n_groups=12, rows_per_group=4, p=6, noise=1.0):
    groups = []
    rows = []
    targets = []
    beta = rng.standard_normal(p)
    for g in range(n_groups):
        latent = rng.standard_normal(p)
        for _ in range(rows_per_group):
            x = latent + 0.3 * rng.standard_normal(p)
            rows.append(x)
            targets.append(float(x @ beta) + noise * rng.standard_normal())
            groups.append(f"g{g}")
    return np.array(rows), np.array(targets), groups


def test_single_value_grid_returned():
    rng = np.random.default_rng(53)
    x, y, groups = grouped_problem(rng)
    lam, table = regress.cv_select_lambda(x, y, [0.37], k=3, seed=1,
                                          groups=groups)
    assert lam == 0.37
    assert len(table) == 3
    assert {cell.fold for cell in table} == {0, 1, 2}


def test_noiseless_linear_prefers_smallest_lambda():
    rng = np.random.default_rng(54)
    x, y, groups = grouped_problem(rng, noise=0.0)
    grid = [1e-6, 1e-2, 1.0, 100.0]
    lam, table = regress.cv_select_lambda(x, y, grid, k=4, seed=0,
                                          groups=groups)
    assert lam == 1e-6
    # exhaustive check: mean score really is best at the smallest value
    means = {}
    for cell in table:
        means.setdefault(cell.lam, []).append(cell.r2)
    mean_scores = {lam_: float(np.mean(v)) for lam_, v in means.items()}
    assert max(mean_scores, key=mean_scores.get) == 1e-6


def test_too_few_groups():
    rng = np.random.default_rng(55)
    x, y, _ = grouped_problem(rng, n_groups=3)
    groups = ["a", "b", "c"] * 4
    with pytest.raises(TooFewGroupsError):
        regress.cv_select_lambda(x, y, [1.0], k=5, groups=groups)


def test_group_integrity_across_folds():
    rng = np.random.default_rng(56)
    _, _, groups = grouped_problem(rng, n_groups=17, rows_per_group=3)
    folds = regress.group_kfold(groups, k=5, seed=9)
    all_rows = np.concatenate(folds)
    assert sorted(all_rows.tolist()) == list(range(len(groups)))
    for f, val_idx in enumerate(folds):
        val_groups = {groups[i] for i in val_idx}
        train_groups = {groups[i] for i in all_rows if i not in set(val_idx)}
        assert not (val_groups & train_groups)


def test_cv_deterministic():
    rng = np.random.default_rng(57)
    x, y, groups = grouped_problem(rng)
    first = regress.cv_select_lambda(x, y, [0.1, 1.0, 10.0], k=3, seed=4,
                                     groups=groups)
    second = regress.cv_select_lambda(x, y, [0.1, 1.0, 10.0], k=3, seed=4,
                                      groups=groups)
    assert first == second
    model_a = regress.ridge_fit(x, y, first[0])
    model_b = regress.ridge_fit(x, y, first[0])
    assert np.array_equal(model_a.coefficients, model_b.coefficients)


def test_tie_breaks_toward_larger_lambda():
    rng = np.random.default_rng(58)
    x, y, groups = grouped_problem(rng)
    # duplicating a lambda forces exact ties; the selected value must be the
    # last (largest) of the tied entries, which equals the value itself here
    lam, _ = regress.cv_select_lambda(x, y, [1.0, 1.0], k=3, seed=0,
                                      groups=groups)
    assert lam == 1.0


# -- serialization ------------------------------------------------------------------

def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(59)
    x, y = random_problem(rng)
    model = regress.ridge_fit(x, y, 0.3, train_metadata={"target": "t"})
    path = tmp_path / "model.json"
    regress.save_model(model, path)
    loaded = regress.load_model(path)
    assert loaded.lam == model.lam
    assert loaded.feature_names == model.feature_names
    assert np.array_equal(loaded.coefficients, model.coefficients)
    assert np.array_equal(loaded.means, model.means)
    assert loaded.intercept == model.intercept
    assert loaded.train_metadata == {"target": "t"}

    payload = json.loads(path.read_text())
    assert set(payload) == {"lambda", "feature_names", "means", "stdevs",
                            "coefficients", "intercept", "train_metadata"}
