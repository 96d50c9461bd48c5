"""The metric model zoo.

Metrics are torch modules mapping a (1, 1, H, W) luma tensor to a scalar
in the raw model convention "higher = better quality"; the bridge negates
raw scores into the loss convention on export.  Color input is reduced to
BT.601 luma inside the bridge, with gradients flowing back through the
reduction.

Two built-in networks ship with deterministically seeded weights so the
bridge runs in a sealed environment; when the ``pyiqa`` model zoo (and
its pretrained weights) are available, any of its metric names resolve
here too, prefixed access not required.
"""

from __future__ import annotations

import torch
import torch.nn as nn

_WEIGHT_SEED = 0x5EED


def _seeded_init(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for p in module.parameters():
        with torch.no_grad():
            p.copy_(torch.empty_like(p).uniform_(-0.4, 0.4, generator=gen))


class ContrastNet(nn.Module):
    """Quality as smoothly saturated multi-scale contrast energy."""

    name = "contrastnet"

    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(1, 6, 3, padding=1)
        self.c2 = nn.Conv2d(6, 6, 3, padding=1, dilation=1)
        self.head = nn.Linear(6, 1)
        _seeded_init(self, _WEIGHT_SEED)

    def forward(self, x):
        z = torch.tanh(self.c1(x * 4.0))
        z = torch.tanh(self.c2(z))
        pooled = (z * z).mean(dim=(2, 3))
        return 10.0 * torch.tanh(self.head(pooled)).squeeze()


class EdgeCoherenceNet(nn.Module):
    """Quality as agreement between learned edge maps at two dilations."""

    name = "edgecoherence"

    def __init__(self):
        super().__init__()
        self.fine = nn.Conv2d(1, 4, 3, padding=1)
        self.coarse = nn.Conv2d(1, 4, 3, padding=2, dilation=2)
        self.mix = nn.Conv2d(8, 4, 1)
        _seeded_init(self, _WEIGHT_SEED + 1)

    def forward(self, x):
        a = torch.nn.functional.softplus(self.fine(x * 4.0))
        b = torch.nn.functional.softplus(self.coarse(x * 4.0))
        z = self.mix(torch.cat([a, b], dim=1))
        return 5.0 * torch.tanh(z.mean())


_BUILTIN = {
    ContrastNet.name: ContrastNet,
    EdgeCoherenceNet.name: EdgeCoherenceNet,
}

BUILTIN_METRICS = tuple(_BUILTIN)


class _PyiqaMetric(nn.Module):
    def __init__(self, name):
        super().__init__()
        import pyiqa
        self.name = name
        self.metric = pyiqa.create_metric(name, device="cpu")

    def forward(self, x):
        rgb = x.expand(-1, 3, -1, -1) if x.shape[1] == 1 else x
        return self.metric(rgb).squeeze()


def create_metric(name: str) -> nn.Module:
    """Resolve a metric name to an eval-mode float64 module."""
    if name in _BUILTIN:
        model = _BUILTIN[name]()
    else:
        try:
            model = _PyiqaMetric(name)
        except ImportError as e:
            raise KeyError(
                f"unknown metric {name!r}: not a built-in "
                f"({', '.join(BUILTIN_METRICS)}) and pyiqa is unavailable") from e
    model = model.double()
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model
