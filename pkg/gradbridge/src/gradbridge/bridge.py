"""Evaluate neural no-reference metrics and backpropagate to the input.

For each (image, metric) pair the bridge produces the metric score and
the gradient of the score with respect to every input sample, both in the
loss convention (lower = better; raw model outputs are higher-better and
get negated).  Optional smoothing averages scores and gradients over n_s
seeded Gaussian perturbations of the input.  Outputs are NGF files and
score CSVs; the bridge never participates in encoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .formats import load_image, save_ngf
from .zoo import create_metric

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class BridgeJob:
    images: tuple
    metrics: tuple
    out_dir: str
    sigma: float = 0.0
    samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.images or not self.metrics:
            raise ValueError("job needs at least one image and one metric")
        if self.sigma < 0 or self.samples < 1:
            raise ValueError("bad smoothing parameters")


def _to_luma(planes: torch.Tensor) -> torch.Tensor:
    if planes.shape[0] == 1:
        return planes[None]
    w = torch.tensor(_LUMA, dtype=planes.dtype)[:, None, None]
    return (planes * w).sum(dim=0, keepdim=True)[None]


def _noise(shape, sigma: float, seed: int, index: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(
        counter=0, key=np.array([seed & 0xFFFFFFFFFFFFFFFF, index],
                                dtype=np.uint64)))
    return sigma * gen.standard_normal(shape)


def evaluate(model, planes: np.ndarray, sigma: float = 0.0, samples: int = 1,
             seed: int = 0) -> tuple[float, np.ndarray]:
    """Loss-convention (score, input gradient) of one metric at one image.

    With sigma > 0 the result is the n_s-sample Monte-Carlo smoothed score
    and gradient, deterministic in (seed, sample index).
    """
    torch.use_deterministic_algorithms(True)
    score_acc = 0.0
    grad_acc = np.zeros_like(planes)
    n = samples if sigma > 0 else 1
    for i in range(n):
        perturbed = planes + _noise(planes.shape, sigma, seed, i) if sigma > 0 \
            else planes
        x = torch.from_numpy(np.ascontiguousarray(perturbed))
        x.requires_grad_(True)
        raw = model(_to_luma(x))
        loss = -raw  # raw models score higher-is-better
        loss.backward()
        score_acc += float(loss.detach())
        grad_acc += x.grad.numpy()
    return score_acc / n, grad_acc / n


def export_gradients(job: BridgeJob) -> list:
    """Write one NGF per (image, metric); returns the written paths."""
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric_name in job.metrics:
        model = create_metric(metric_name)
        for image_path in job.images:
            planes = load_image(image_path)
            score, grad = evaluate(model, planes, job.sigma, job.samples,
                                   job.seed)
            stem = Path(image_path).stem
            path = out_dir / f"{stem}__{metric_name}.ngf"
            save_ngf(path, metric_name, score, grad)
            written.append(path)
    return written


def export_scores(job: BridgeJob) -> Path:
    """Write scores.csv: one row per image, one column per metric."""
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models = {name: create_metric(name) for name in job.metrics}
    lines = ["id," + ",".join(job.metrics)]
    for image_path in job.images:
        planes = load_image(image_path)
        row = [Path(image_path).stem]
        for name in job.metrics:
            score, _ = evaluate(models[name], planes, job.sigma, job.samples,
                                job.seed)
            row.append(repr(score))
        lines.append(",".join(row))
    path = out_dir / "scores.csv"
    path.write_text("\n".join(lines) + "\n")
    return path
