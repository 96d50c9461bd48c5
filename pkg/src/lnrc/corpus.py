"""Procedural test content: deterministic images mixing smooth ramps,
blobs, texture and edges, so codec behavior is non-trivial at every QP.
"""

from __future__ import annotations

import numpy as np

from .image import Image


def make_image(seed: int, height: int = 48, width: int = 48,
               channels: int = 1) -> Image:
    """A seeded synthetic photo-like image in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    planes = []
    for ch in range(channels):
        gx, gy = rng.uniform(-0.5, 0.5, size=2)
        base = 0.45 + gx * (xx / max(width - 1, 1) - 0.5) \
                    + gy * (yy / max(height - 1, 1) - 0.5)
        base += 0.12 * np.sin(xx / rng.uniform(2.5, 9.0) + rng.uniform(0, 6.28))
        for _ in range(3):
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            sy, sx = rng.uniform(2.5, 9.0), rng.uniform(2.5, 9.0)
            base += rng.uniform(-0.35, 0.45) * np.exp(
                -(((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
        # a hard vertical edge makes some blocks genuinely expensive
        edge_col = int(rng.integers(width // 4, 3 * width // 4))
        base += np.where(xx >= edge_col, rng.uniform(-0.2, 0.25), 0.0)
        base += 0.03 * rng.standard_normal((height, width))
        planes.append(np.clip(base, 0.0, 1.0))
    return Image(np.stack(planes))


def _diffuse(a: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        a = (np.roll(a, 1, 0) + np.roll(a, -1, 0)
             + np.roll(a, 1, 1) + np.roll(a, -1, 1) + 4 * a) / 8.0
    return a


def make_textured_image(seed: int, height: int = 96, width: int = 96) -> Image:
    """Strongly textured content whose detail outlives coarse quantization.

    On such content the block codec's artifacts (ringing, level jumps)
    dominate local-variation measures, so variation-based scores degrade
    monotonically as QP rises: the regime where steering bit allocation
    by a metric gradient can beat uniform coarsening.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 0.5 + rng.uniform(-0.2, 0.2) * (xx / (width - 1) - 0.5) \
               + rng.uniform(-0.2, 0.2) * (yy / (height - 1) - 0.5)
    fine = _diffuse(rng.standard_normal((height, width)), 1)
    coarse = _diffuse(rng.standard_normal((height, width)), 3)
    base += 0.12 * fine / fine.std() + 0.25 * coarse / coarse.std()
    for _ in range(3):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sy, sx = rng.uniform(6.0, 14.0), rng.uniform(6.0, 14.0)
        base += rng.uniform(0.12, 0.25) * rng.choice([-1, 1]) * \
            np.exp(-(((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
    return Image(np.clip(base, 0.02, 0.98)[None])
