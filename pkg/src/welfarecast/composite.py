"""Cloud-free median compositing of image tile stacks, plus tile file I/O.

For every pixel and band, the composite is the median over observations
dated within the 365 days before the end date whose cloud mask marks the
pixel clear. An even number of clear values yields the midpoint mean of
the two middle values. Pixels with no clear observation carry NaN and a
zero validity bit, so downstream consumers can distinguish "dark" from
"absent".

Tile file layout (one tile = one JSON sidecar plus flat binary arrays):

* ``<stem>.json``: ``{"width", "height", "bands", "date", "ea_id", "wave",
  "visit", "band_files": {band: filename}, "mask_file": filename}``
* each band file: row-major little-endian float32, width*height values,
  NaN marking invalid pixels
* mask file: row-major uint8, 1 = pixel valid.
"""

from __future__ import annotations

import datetime
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError, SizeError

BANDS = ("RED", "GREEN", "BLUE", "NIR", "SWIR1", "SWIR2", "TEMP1")
NIGHTLIGHTS_BAND = "NL"

EXPORT_SIDE = 255
CROP_SIDE = 224
CROP_OFFSET = (EXPORT_SIDE - CROP_SIDE) // 2  # 15
COMPOSITE_WINDOW_DAYS = 365


@dataclass
class Observation:
    """One dated acquisition: per-band pixel arrays plus a clear-sky mask.

    ``clear_mask`` is True where the pixel is cloud-free.
    """

    date: datetime.date
    pixels: dict[str, np.ndarray]
    clear_mask: np.ndarray


@dataclass
class TileStack:
    width: int
    height: int
    bands: tuple[str, ...]
    observations: list[Observation] = field(default_factory=list)

    def validate(self) -> None:
        shape = (self.height, self.width)
        for band in self.bands:
            if band not in BANDS:
                raise ValueError(f"unknown band {band!r}")
        for obs in self.observations:
            if set(obs.pixels.keys()) != set(self.bands):
                raise ShapeMismatchError(
                    f"observation {obs.date} bands {sorted(obs.pixels)} "
                    f"do not match stack bands {sorted(self.bands)}")
            for band, arr in obs.pixels.items():
                if arr.shape != shape:
                    raise ShapeMismatchError(
                        f"observation {obs.date} band {band}: shape "
                        f"{arr.shape} != {shape}")
            if obs.clear_mask.shape != shape:
                raise ShapeMismatchError(
                    f"observation {obs.date}: mask shape "
                    f"{obs.clear_mask.shape} != {shape}")


@dataclass
class CompositeTile:
    width: int
    height: int
    bands: tuple[str, ...]
    pixels: dict[str, np.ndarray]  # float64, NaN where invalid
    valid: np.ndarray              # bool, True where >=1 clear observation


def median_composite(stack: TileStack,
                     end_date: datetime.date) -> CompositeTile:
    """Per-pixel median of clear observations in [end_date - 365, end_date).

    Raises:
        ShapeMismatchError: observations disagree on shape or band set.
        ValueError: the stack holds no observations.
    """
    if not stack.observations:
        raise ValueError("tile stack has no observations")
    stack.validate()

    window_start = end_date - datetime.timedelta(days=COMPOSITE_WINDOW_DAYS)
    in_window = [obs for obs in stack.observations
                 if window_start <= obs.date < end_date]

    shape = (stack.height, stack.width)
    pixels: dict[str, np.ndarray] = {}
    if not in_window:
        for band in stack.bands:
            pixels[band] = np.full(shape, np.nan)
        return CompositeTile(stack.width, stack.height, stack.bands,
                             pixels, np.zeros(shape, dtype=bool))

    clear = np.stack([obs.clear_mask.astype(bool) for obs in in_window])
    valid = clear.any(axis=0)
    for band in stack.bands:
        cube = np.stack([np.asarray(obs.pixels[band], dtype=np.float64)
                         for obs in in_window])
        cube = np.where(clear, cube, np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=RuntimeWarning)
            pixels[band] = np.nanmedian(cube, axis=0)
    return CompositeTile(stack.width, stack.height, stack.bands,
                         pixels, valid)


def center_crop(tile: CompositeTile) -> CompositeTile:
    """Crop a 255x255 composite to its central 224x224 pixels.

    Keeps rows and columns 15..238 inclusive.

    Raises:
        SizeError: the tile is not exactly 255x255.
    """
    if (tile.width, tile.height) != (EXPORT_SIDE, EXPORT_SIDE):
        raise SizeError(f"center crop requires a {EXPORT_SIDE}x{EXPORT_SIDE} "
                        f"tile, got {tile.width}x{tile.height}")
    sl = slice(CROP_OFFSET, CROP_OFFSET + CROP_SIDE)
    return CompositeTile(
        width=CROP_SIDE, height=CROP_SIDE, bands=tile.bands,
        pixels={band: arr[sl, sl].copy() for band, arr in tile.pixels.items()},
        valid=tile.valid[sl, sl].copy())


def write_tile(directory: str | Path, stem: str, tile: CompositeTile, *,
               ea_id: str, wave: int, visit: str,
               date: datetime.date) -> Path:
    """Write a composite tile in the documented binary-plus-sidecar layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    band_files = {}
    for band in tile.bands:
        filename = f"{stem}.{band}.bin"
        tile.pixels[band].astype("<f4").tofile(directory / filename)
        band_files[band] = filename
    mask_file = f"{stem}.mask.bin"
    tile.valid.astype(np.uint8).tofile(directory / mask_file)

    sidecar = {
        "width": tile.width,
        "height": tile.height,
        "bands": list(tile.bands),
        "date": date.isoformat(),
        "ea_id": ea_id,
        "wave": wave,
        "visit": visit,
        "band_files": band_files,
        "mask_file": mask_file,
    }
    sidecar_path = directory / f"{stem}.json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar_path


def read_tile(sidecar_path: str | Path) -> tuple[dict, CompositeTile]:
    """Read a tile written by :func:`write_tile`; returns (metadata, tile)."""
    sidecar_path = Path(sidecar_path)
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    shape = (meta["height"], meta["width"])
    directory = sidecar_path.parent
    pixels = {}
    for band, filename in meta["band_files"].items():
        arr = np.fromfile(directory / filename, dtype="<f4")
        if arr.size != shape[0] * shape[1]:
            raise ShapeMismatchError(
                f"{filename}: expected {shape[0] * shape[1]} values, "
                f"got {arr.size}")
        pixels[band] = arr.reshape(shape).astype(np.float64)
    mask = np.fromfile(directory / meta["mask_file"], dtype=np.uint8)
    if mask.size != shape[0] * shape[1]:
        raise ShapeMismatchError(f"{meta['mask_file']}: bad mask size")
    tile = CompositeTile(width=meta["width"], height=meta["height"],
                         bands=tuple(meta["bands"]), pixels=pixels,
                         valid=mask.reshape(shape).astype(bool))
    return meta, tile
