"""Monte-Carlo smoothing of metric scores and gradients.

b_sigma(x) = mean_i b(x + n_i) and grad b_sigma(x) = mean_i grad b(x + n_i)
over n_s i.i.d. Gaussian perturbations n_i ~ N(0, sigma^2 I).  Sample i of
the score and gradient paths share the same noise realization, so the
smoothed gradient is the exact linearization of the estimated smoothed
score.  Perturbations live in the unclamped float domain (clamping would
bias gradients at saturated pixels).

Determinism contract: noise for sample i comes from the stream keyed
(seed, index_offset + i); per-sample results are reduced in ascending
index order regardless of execution order, so (metric, x, cfg) fully
determines outputs bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ValidationError
from .image import GradientField, Image
from .metrics import resolve_metric


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float
    samples: int = 5
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValidationError(f"sigma must be finite and > 0, got {self.sigma}")
        if self.samples < 1:
            raise ValidationError(f"need at least 1 sample, got {self.samples}")


def _geometry(geometry) -> tuple[int, int, int]:
    if hasattr(geometry, "geometry"):
        return geometry.geometry()
    c, h, w = geometry
    return int(c), int(h), int(w)


def gaussian_field(geometry, sigma: float, seed: int, index: int) -> GradientField:
    """I.i.d. N(0, sigma^2) noise shaped like the given image geometry,
    drawn from the stream keyed (seed, index)."""
    if sigma <= 0:
        raise ValidationError("sigma must be > 0")
    c, h, w = _geometry(geometry)
    z = rng.normals(seed, index, c * h * w)
    return GradientField((sigma * z).reshape(c, h, w))


def noise_stack(geometry, cfg: SmoothingConfig, index_offset: int = 0) -> np.ndarray:
    """All n_s noise fields as one (n_s, c, h, w) array.

    Row i is bit-identical to gaussian_field(..., cfg.seed, index_offset+i).
    """
    c, h, w = _geometry(geometry)
    indices = range(index_offset, index_offset + cfg.samples)
    z = rng.normals_many(cfg.seed, indices, c * h * w)
    return (cfg.sigma * z).reshape(cfg.samples, c, h, w)


def smooth_score(metric, x: Image, cfg: SmoothingConfig, index_offset: int = 0) -> float:
    m = resolve_metric(metric)
    noise = noise_stack(x, cfg, index_offset)
    acc = 0.0
    for i in range(cfg.samples):
        acc += m.score(Image(x.planes + noise[i]))
    return acc / cfg.samples


def smooth_grad(metric, x: Image, cfg: SmoothingConfig, index_offset: int = 0) -> GradientField:
    m = resolve_metric(metric)
    noise = noise_stack(x, cfg, index_offset)
    acc = None
    for i in range(cfg.samples):
        g = m.grad(Image(x.planes + noise[i])).planes
        acc = g.copy() if acc is None else acc + g
    return GradientField(acc / cfg.samples)


def smooth_evaluate(metric, x: Image, cfg: SmoothingConfig, index_offset: int = 0):
    """Smoothed (score, gradient) sharing one set of noise realizations."""
    m = resolve_metric(metric)
    noise = noise_stack(x, cfg, index_offset)
    s_acc = 0.0
    g_acc = None
    for i in range(cfg.samples):
        xi = Image(x.planes + noise[i])
        s_acc += m.score(xi)
        g = m.grad(xi).planes
        g_acc = g.copy() if g_acc is None else g_acc + g
    return s_acc / cfg.samples, GradientField(g_acc / cfg.samples)
