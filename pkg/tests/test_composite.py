import datetime

import numpy as np
import pytest

from welfarecast import composite
from welfarecast.composite import CompositeTile, Observation, TileStack
from welfarecast.errors import ShapeMismatchError, SizeError

import oracles

END = datetime.date(2012, 6, 1)


def obs(days_before_end, value, clear=True, shape=(2, 2), bands=("RED",)):
    date = END - datetime.timedelta(days=days_before_end)
    pixels = {b: np.full(shape, float(value)) for b in bands}
    mask = np.full(shape, bool(clear))
    return Observation(date=date, pixels=pixels, clear_mask=mask)


def stack_of(observations, shape=(2, 2), bands=("RED",)):
    return TileStack(width=shape[1], height=shape[0], bands=tuple(bands),
                     observations=observations)


def test_single_clear_observation_passes_through():
    tile = composite.median_composite(stack_of([obs(10, 7.5)]), END)
    assert np.all(tile.pixels["RED"] == 7.5)
    assert tile.valid.all()


def test_median_odd_and_even_counts():
    tile = composite.median_composite(
        stack_of([obs(10, 1), obs(20, 9), obs(30, 5)]), END)
    assert np.all(tile.pixels["RED"] == 5.0)

    tile = composite.median_composite(stack_of([obs(10, 1), obs(20, 9)]), END)
    assert np.all(tile.pixels["RED"] == 5.0)  # midpoint of the two middles


def test_fully_cloudy_pixel_is_invalid_nan():
    tile = composite.median_composite(
        stack_of([obs(10, 3, clear=False), obs(20, 4, clear=False)]), END)
    assert not tile.valid.any()
    assert np.isnan(tile.pixels["RED"]).all()


def test_order_invariance_and_cloudy_insertion():
    observations = [obs(5, 2), obs(40, 8), obs(80, 3)]
    base = composite.median_composite(stack_of(observations), END)
    shuffled = composite.median_composite(
        stack_of([observations[2], observations[0], observations[1]]), END)
    assert np.array_equal(base.pixels["RED"], shuffled.pixels["RED"])

    with_cloudy = observations + [obs(15, 99, clear=False)]
    again = composite.median_composite(stack_of(with_cloudy), END)
    assert np.array_equal(base.pixels["RED"], again.pixels["RED"])


def test_date_filter_half_open():
    inside_old = obs(365, 1.0)       # end - 365: included
    outside_new = obs(0, 100.0)      # dated the end date itself: excluded
    outside_old = obs(366, 100.0)    # before the window: excluded
    tile = composite.median_composite(
        stack_of([inside_old, outside_new, outside_old]), END)
    assert np.all(tile.pixels["RED"] == 1.0)


def test_shape_mismatch_detected():
    bad = Observation(date=END - datetime.timedelta(days=3),
                      pixels={"RED": np.zeros((3, 2))},
                      clear_mask=np.ones((2, 2), dtype=bool))
    with pytest.raises(ShapeMismatchError):
        composite.median_composite(stack_of([obs(10, 1), bad]), END)


def test_empty_stack_rejected():
    with pytest.raises(ValueError):
        composite.median_composite(stack_of([]), END)


def test_fuzzed_stacks_match_sort_oracle():
    rng = np.random.default_rng(31)
    for _ in range(200):
        h, w = 3, 4
        n_obs = int(rng.integers(1, 7))
        observations = []
        for _ in range(n_obs):
            days = int(rng.integers(-20, 420))
            observations.append(Observation(
                date=END - datetime.timedelta(days=days),
                pixels={"RED": rng.uniform(0, 100, (h, w))},
                clear_mask=rng.random((h, w)) < 0.6))
        stack = TileStack(width=w, height=h, bands=("RED",),
                          observations=observations)
        tile = composite.median_composite(stack, END)
        window_start = END - datetime.timedelta(days=365)
        for i in range(h):
            for j in range(w):
                values = [o.pixels["RED"][i, j] for o in observations
                          if o.clear_mask[i, j]
                          and window_start <= o.date < END]
                if values:
                    assert tile.valid[i, j]
                    assert tile.pixels["RED"][i, j] == \
                        oracles.sorted_median(values)
                    assert min(values) <= tile.pixels["RED"][i, j] <= max(values)
                else:
                    assert not tile.valid[i, j]
                    assert np.isnan(tile.pixels["RED"][i, j])


# -- center crop ---------------------------------------------------------------

def full_tile(side, values):
    return CompositeTile(width=side, height=side, bands=("RED",),
                         pixels={"RED": values},
                         valid=np.ones((side, side), dtype=bool))


def test_crop_offset_is_fifteen():
    values = np.tile(np.arange(255, dtype=np.float64)[:, None], (1, 255))
    cropped = composite.center_crop(full_tile(255, values))
    assert cropped.width == cropped.height == 224
    assert np.all(cropped.pixels["RED"][0] == 15.0)
    assert np.all(cropped.pixels["RED"][-1] == 238.0)


def test_crop_rejects_wrong_size():
    with pytest.raises(SizeError):
        composite.center_crop(full_tile(224, np.zeros((224, 224))))


def test_crop_of_padded_tile_recovers_interior():
    rng = np.random.default_rng(32)
    interior = rng.uniform(0, 1, (224, 224))
    padded = np.full((255, 255), -1.0)
    padded[15:239, 15:239] = interior
    cropped = composite.center_crop(full_tile(255, padded))
    assert np.array_equal(cropped.pixels["RED"], interior)


# -- tile file round trip --------------------------------------------------------

def test_tile_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(33)
    pixels = {b: rng.uniform(0, 1, (8, 8)).astype(np.float32).astype(np.float64)
              for b in ("RED", "NIR")}
    valid = rng.random((8, 8)) < 0.9
    for band in pixels:
        pixels[band][~valid] = np.nan
    tile = CompositeTile(width=8, height=8, bands=("RED", "NIR"),
                         pixels=pixels, valid=valid)
    sidecar = composite.write_tile(tmp_path, "t1", tile, ea_id="ea1", wave=2,
                                   visit="PP", date=END)
    meta, loaded = composite.read_tile(sidecar)
    assert meta["ea_id"] == "ea1" and meta["wave"] == 2
    assert loaded.bands == ("RED", "NIR")
    for band in tile.bands:
        # float32 storage: values were float32-representable, so exact
        assert np.array_equal(loaded.pixels[band], tile.pixels[band],
                              equal_nan=True)
    assert np.array_equal(loaded.valid, valid)
