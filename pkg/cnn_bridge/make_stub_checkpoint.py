#!/usr/bin/env python3
"""Create the tiny CI stub checkpoints (pool-linear-v1) and their
normalization sidecars under stub/.

The weights are drawn from a fixed seed so regenerating the files is
reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from cnn_bridge import FEATURE_DIM, MS_BANDS, NL_BANDS, STUB_ARCH

SEED = 20240817

# Rough Landsat surface-reflectance scale for the daytime bands and a
# plain radiance-like scale for nightlights; placeholders, not Yeh et al.
# statistics (those must come from the real checkpoints' sidecars).
STATS = {
    "RED": {"mean": 0.10, "std": 0.08},
    "GREEN": {"mean": 0.09, "std": 0.07},
    "BLUE": {"mean": 0.07, "std": 0.06},
    "NIR": {"mean": 0.25, "std": 0.12},
    "SWIR1": {"mean": 0.22, "std": 0.11},
    "SWIR2": {"mean": 0.16, "std": 0.10},
    "TEMP1": {"mean": 300.0, "std": 12.0},
    "NL": {"mean": 4.0, "std": 10.0},
}


def write_stub(path: Path, bands, rng) -> None:
    weight = rng.standard_normal((FEATURE_DIM, len(bands)))
    bias = rng.standard_normal(FEATURE_DIM) * 0.1
    np.savez(path, arch=np.str_(STUB_ARCH),
             bands=np.array(bands, dtype="U10"),
             weight=weight, bias=bias)
    sidecar = Path(str(path) + ".norm.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({b: STATS[b] for b in bands}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main() -> None:
    out_dir = Path(__file__).parent / "stub"
    out_dir.mkdir(exist_ok=True)
    rng = np.random.default_rng(SEED)
    write_stub(out_dir / "ms_stub.npz", MS_BANDS, rng)
    write_stub(out_dir / "nl_stub.npz", NL_BANDS, rng)
    print(f"stub checkpoints written to {out_dir}")


if __name__ == "__main__":
    main()
