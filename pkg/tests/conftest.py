import json
from pathlib import Path

import numpy as np
import pytest

from lnrc.corpus import make_image
from lnrc.image import GradientField, Image

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def goldens():
    return json.loads((DATA_DIR / "goldens.json").read_text())


@pytest.fixture
def image32():
    return make_image(7, 32, 32)


@pytest.fixture
def image48():
    return make_image(3, 48, 48)


def conditioned_image(seed, h=32, w=32):
    """Seeded random image whose neighbor differences stay far from the
    Charbonnier kink, so h=1e-5 central differences are a valid oracle."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.2 + 0.6 * ((yy + xx) % 2) + 0.2 * rng.random((h, w))
    return Image((base / base.max())[None])


def fd_gradient(score_fn, planes, coords, h=1e-5):
    """Central finite differences of a scalar image functional."""
    out = []
    for (ch, r, c) in coords:
        p = planes.copy()
        p[ch, r, c] += h
        up = score_fn(Image(p))
        p[ch, r, c] -= 2 * h
        dn = score_fn(Image(p))
        out.append((up - dn) / (2 * h))
    return np.array(out)


def sample_coords(rng, geometry, k):
    c, h, w = geometry
    coords = {(0, 0, 0), (c - 1, h - 1, w - 1), (0, 0, w - 1), (0, h - 1, 0)}
    while len(coords) < k:
        coords.add((int(rng.integers(c)), int(rng.integers(h)), int(rng.integers(w))))
    return sorted(coords)


class QuadraticMetric:
    """b(x) = sum x^2; E[b(x+n)] = b(x) + n_p sigma^2, grad = 2x."""

    name = "test-quadratic"

    def score(self, img):
        return float(np.dot(img.data, img.data))

    def grad(self, img):
        return GradientField(2.0 * img.planes)


class LinearMetric:
    """b(x) = <a, x>; smoothing leaves the gradient exactly a."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)
        self.name = "test-linear"

    def score(self, img):
        return float(np.dot(self.a.reshape(-1), img.data))

    def grad(self, img):
        return GradientField(self.a.reshape(img.geometry()).copy())


class ConstantMetric:
    name = "test-constant"

    def __init__(self, c=1.25):
        self.c = c

    def score(self, img):
        return self.c

    def grad(self, img):
        return GradientField(np.zeros(img.geometry()))


def curves_equal(a, b, ignore_ms=True):
    if len(a) != len(b):
        return False
    for pa, pb in zip(a, b):
        if pa.qp != pb.qp or pa.bpp != pb.bpp or pa.psnr_db != pb.psnr_db:
            return False
        if pa.scores != pb.scores:
            return False
        if not ignore_ms and pa.ms != pb.ms:
            return False
    return True
