#!/usr/bin/env python3
"""Offline feature extraction: run MS and NL checkpoints over image tiles
and emit a features.csv row per (ea_id, wave, visit).

Tiles use the binary-plus-JSON-sidecar layout written by the pipeline's
compositor: ``<stem>.json`` describing width/height/bands plus row-major
little-endian float32 band files and a uint8 validity mask. An MS tile
carries the seven daytime bands, an NL tile the single "NL" band; both
must be 224x224 and each observation key needs one of each.

Two checkpoint containers are supported:

* ``.npz`` with ``arch == "pool-linear-v1"``: a tiny numpy-executed stub
  (per-band global mean of the normalized tile through one linear layer),
  shipped under ``stub/`` so the bridge is testable without real weights.
* anything else is loaded with ``torch.jit.load`` and called in eval mode
  on (batch, bands, 224, 224) float32 input; the script output must be
  (batch, 512) penultimate activations.

Band normalization statistics are never hard-coded: each checkpoint reads
``<checkpoint>.norm.json`` mapping band name to {"mean", "std"}. Invalid
(NaN) pixels are set to the band mean, i.e. zero after normalization.

Failures are collected into ``<out>.report.json``; the features file is
only written when every tile extracted, so its row count always equals
the tile-pair count.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MS_BANDS = ("RED", "GREEN", "BLUE", "NIR", "SWIR1", "SWIR2", "TEMP1")
NL_BANDS = ("NL",)
TILE_SIDE = 224
FEATURE_DIM = 512
STUB_ARCH = "pool-linear-v1"


class CheckpointError(Exception):
    """A checkpoint is missing, malformed, or has the wrong output shape."""


class TileShapeError(Exception):
    """A tile has the wrong size or band set, or lacks its counterpart."""


@dataclass
class ExtractionManifest:
    ms_checkpoint: Path
    nl_checkpoint: Path
    tile_dir: Path
    output: Path
    batch_size: int = 32
    device: str = "cpu"

    def validate(self) -> None:
        for label, path in (("--ms-ckpt", self.ms_checkpoint),
                            ("--nl-ckpt", self.nl_checkpoint)):
            if not Path(path).exists():
                raise CheckpointError(f"{label} {path} does not exist")
        if not Path(self.tile_dir).is_dir():
            raise TileShapeError(f"tile directory {self.tile_dir} not found")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def load_normalization(checkpoint_path: Path, bands) -> dict[str, tuple[float, float]]:
    """Read the per-band {mean, std} sidecar next to a checkpoint."""
    sidecar = Path(str(checkpoint_path) + ".norm.json")
    if not sidecar.exists():
        raise CheckpointError(f"normalization sidecar {sidecar} is missing")
    with open(sidecar, "r", encoding="utf-8") as fh:
        stats = json.load(fh)
    out = {}
    for band in bands:
        if band not in stats:
            raise CheckpointError(f"{sidecar}: no statistics for band {band!r}")
        entry = stats[band]
        std = float(entry["std"])
        if std <= 0:
            raise CheckpointError(f"{sidecar}: band {band!r} has std <= 0")
        out[band] = (float(entry["mean"]), std)
    return out


class StubModel:
    """Numpy forward pass for the pool-linear stub container."""

    def __init__(self, bands, weight, bias):
        self.bands = tuple(bands)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.shape != (FEATURE_DIM, len(self.bands)):
            raise CheckpointError(
                f"stub weight shape {self.weight.shape} does not match "
                f"{FEATURE_DIM}x{len(self.bands)}")

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        # batch: (n, bands, H, W), already normalized. One matvec per row
        # keeps every output bit-independent of how tiles were batched.
        pooled = batch.mean(axis=(2, 3))
        return np.stack([self.weight @ row + self.bias for row in pooled])


class TorchScriptModel:
    """Eval-mode TorchScript wrapper (the path for real exported weights)."""

    def __init__(self, path: Path, bands, device: str):
        try:
            import torch
        except ImportError as exc:
            raise CheckpointError(
                f"{path} is not a stub container and torch is not "
                "installed") from exc
        self._torch = torch
        try:
            self.module = torch.jit.load(str(path), map_location=device)
        except Exception as exc:
            raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
        self.module.eval()
        self.bands = tuple(bands)
        self.device = device

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            tensor = torch.from_numpy(batch.astype(np.float32)).to(self.device)
            out = self.module(tensor).cpu().numpy().astype(np.float64)
        if out.shape != (batch.shape[0], FEATURE_DIM):
            raise CheckpointError(
                f"checkpoint produced shape {out.shape}, expected "
                f"(batch, {FEATURE_DIM})")
        return out


def load_model(path: Path, expected_bands, device: str):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as payload:
            if "arch" not in payload or str(payload["arch"]) != STUB_ARCH:
                raise CheckpointError(f"{path}: unknown stub architecture")
            bands = tuple(str(b) for b in payload["bands"])
            if bands != tuple(expected_bands):
                raise CheckpointError(
                    f"{path}: checkpoint bands {bands} do not match the "
                    f"expected {tuple(expected_bands)}")
            return StubModel(bands, payload["weight"], payload["bias"])
    return TorchScriptModel(path, expected_bands, device)


@dataclass
class Tile:
    key: tuple[str, int, str]  # (ea_id, wave, visit)
    sidecar: Path
    bands: tuple[str, ...]
    band_arrays: dict[str, np.ndarray]


def read_tile(sidecar_path: Path) -> Tile:
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    width, height = int(meta["width"]), int(meta["height"])
    if (width, height) != (TILE_SIDE, TILE_SIDE):
        raise TileShapeError(
            f"{sidecar_path.name}: tile is {width}x{height}, "
            f"expected {TILE_SIDE}x{TILE_SIDE}")
    bands = tuple(meta["bands"])
    if bands not in (MS_BANDS, NL_BANDS):
        raise TileShapeError(
            f"{sidecar_path.name}: band set {bands} is neither the MS set "
            f"nor the NL band")
    arrays = {}
    for band in bands:
        band_path = sidecar_path.parent / meta["band_files"][band]
        raw = np.fromfile(band_path, dtype="<f4")
        if raw.size != width * height:
            raise TileShapeError(
                f"{band_path.name}: {raw.size} values, expected "
                f"{width * height}")
        arrays[band] = raw.reshape(height, width).astype(np.float64)
    key = (str(meta["ea_id"]), int(meta["wave"]), str(meta["visit"]))
    return Tile(key=key, sidecar=sidecar_path, bands=bands,
                band_arrays=arrays)


def normalized_batch(tiles: list[Tile], bands,
                     stats: dict[str, tuple[float, float]]) -> np.ndarray:
    batch = np.empty((len(tiles), len(bands), TILE_SIDE, TILE_SIDE))
    for i, tile in enumerate(tiles):
        for c, band in enumerate(bands):
            mean, std = stats[band]
            arr = tile.band_arrays[band]
            plane = (arr - mean) / std
            batch[i, c] = np.where(np.isnan(plane), 0.0, plane)
    return batch


def _extract_block(tiles, model, bands, stats, batch_size) -> np.ndarray:
    outputs = []
    for start in range(0, len(tiles), batch_size):
        chunk = tiles[start:start + batch_size]
        outputs.append(model(normalized_batch(chunk, bands, stats)))
    return np.vstack(outputs)


def extract_features(manifest: ExtractionManifest) -> Path:
    """Run both checkpoints over all tile pairs and write features.csv.

    Always writes ``<out>.report.json``. Raises (after the report) if any
    tile fails to parse or an observation key lacks its MS/NL counterpart.
    """
    manifest.validate()
    ms_model = load_model(manifest.ms_checkpoint, MS_BANDS, manifest.device)
    nl_model = load_model(manifest.nl_checkpoint, NL_BANDS, manifest.device)
    ms_stats = load_normalization(manifest.ms_checkpoint, MS_BANDS)
    nl_stats = load_normalization(manifest.nl_checkpoint, NL_BANDS)

    ms_tiles: dict[tuple, Tile] = {}
    nl_tiles: dict[tuple, Tile] = {}
    failures: list[dict[str, str]] = []
    sidecars = sorted(Path(manifest.tile_dir).glob("*.json"))
    for sidecar in sidecars:
        try:
            tile = read_tile(sidecar)
        except (TileShapeError, KeyError, ValueError, OSError) as exc:
            failures.append({"tile": sidecar.name, "error": str(exc)})
            continue
        registry = ms_tiles if tile.bands == MS_BANDS else nl_tiles
        if tile.key in registry:
            failures.append({"tile": sidecar.name,
                             "error": f"duplicate tile for key {tile.key}"})
            continue
        registry[tile.key] = tile

    keys = sorted(set(ms_tiles) | set(nl_tiles))
    for key in keys:
        if key not in ms_tiles:
            failures.append({"tile": f"{key}", "error": "missing MS tile"})
        if key not in nl_tiles:
            failures.append({"tile": f"{key}", "error": "missing NL tile"})

    report_path = Path(str(manifest.output) + ".report.json")
    report = {
        "sidecars": len(sidecars),
        "observation_keys": len(keys),
        "rows_written": 0 if failures else len(keys),
        "failures": failures,
    }
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if failures:
        raise TileShapeError(
            f"{len(failures)} tile failure(s); see {report_path}")

    ms_features = _extract_block([ms_tiles[k] for k in keys], ms_model,
                                 MS_BANDS, ms_stats, manifest.batch_size)
    nl_features = _extract_block([nl_tiles[k] for k in keys], nl_model,
                                 NL_BANDS, nl_stats, manifest.batch_size)

    header = ["ea_id", "wave", "visit",
              *(f"f{i:04d}" for i in range(1, 2 * FEATURE_DIM + 1))]
    with open(manifest.output, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, (ea_id, wave, visit) in enumerate(keys):
            values = np.concatenate([ms_features[i], nl_features[i]])
            fh.write(",".join([ea_id, str(wave), visit,
                               *(repr(float(v)) for v in values)]) + "\n")
    return Path(manifest.output)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Extract penultimate CNN features from composite tiles")
    parser.add_argument("--ms-ckpt", required=True, type=Path,
                        help="multispectral model checkpoint")
    parser.add_argument("--nl-ckpt", required=True, type=Path,
                        help="nightlights model checkpoint")
    parser.add_argument("--tiles", required=True, type=Path,
                        help="directory of tile sidecars and band files")
    parser.add_argument("--out", required=True, type=Path,
                        help="output features.csv path")
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    manifest = ExtractionManifest(
        ms_checkpoint=args.ms_ckpt, nl_checkpoint=args.nl_ckpt,
        tile_dir=args.tiles, output=args.out, batch_size=args.batch,
        device=args.device)
    try:
        extract_features(manifest)
    except (CheckpointError, TileShapeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
