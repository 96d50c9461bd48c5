#!/usr/bin/env python3
"""Regenerate the pinned expected values in tests/data/goldens.json.

Each golden is produced by a verified run (cross-checked in the test
suite against an independent oracle where one exists) and then frozen so
regressions are caught bit-for-bit.  Run from the repository root:

    python3 scripts/regen_goldens.py
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lnrc.blockcodec import reconstruct_block
from lnrc.corpus import make_image
from lnrc.image import Image, sse, synth_ugc
from lnrc.metrics import Sharpness
from lnrc.overfit import OverfitConfig, train


def checkerboard(n=16):
    yy, xx = np.mgrid[0:n, 0:n]
    return Image(((yy + xx) % 2).astype(np.float64)[None])


def main():
    goldens = {}

    goldens["sharpness_checkerboard16"] = Sharpness().score(checkerboard())

    rng = np.random.default_rng(20240917)
    block = rng.random((16, 16))
    recon, bits = reconstruct_block(block, 25)
    goldens["block_qp25"] = {
        "seed": 20240917,
        "sse": float(np.sum((recon - block) ** 2)),
        "bits": int(bits),
    }

    mid = Image(np.full((1, 64, 64), 0.5))
    noised = synth_ugc(mid, "gaussian-noise", 0.01, seed=11)
    goldens["synth_noise_std"] = float(np.std(noised.planes - 0.5))

    img = make_image(7, 32, 32)
    res = train(img, OverfitConfig(lam=0.001, iterations=2000, warmup=200, seed=3))
    goldens["overfit_sse_32"] = {
        "psnr_db": res.psnr_db,
        "bpp": res.bpp,
        "loss_warmup_end": float(res.loss_history[199]),
        "loss_final": float(res.loss_history[-1]),
    }

    out = Path(__file__).resolve().parent.parent / "tests" / "data" / "goldens.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(goldens, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    for k, v in goldens.items():
        print(f"  {k}: {v}")


if __name__ == "__main__":
    main()
