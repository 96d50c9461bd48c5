"""No-reference quality metrics with closed-form input gradients.

All metrics use the loss convention: lower score = better quality under
that metric's model.  Built-ins are cheap analytical surrogates so the
whole laboratory runs without neural dependencies; gradients computed by
real neural metrics enter through NGF files (see load_ngf/save_ngf).

NGF (NRM Gradient Field) interchange format, little-endian:
magic ``NGF1``; u32 width; u32 height; u32 channels; u32 name_len;
name_len bytes UTF-8 metric name; f64 score; then width*height*channels
float32 gradient samples, channel-planar, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .image import GradientField, Image

CHARBONNIER_EPS = 1e-3
BLOCK_GRID = 8


@dataclass(frozen=True)
class MetricEvaluation:
    """A score and the input gradient it was differentiated into."""

    score: float
    gradient: GradientField

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValidationError("non-finite metric score")


class TvCharbonnier:
    """Mean Charbonnier total variation; penalizes noise.

    score = (1/n) * sum_p sqrt(dh_p^2 + dv_p^2 + eps^2) with forward
    differences (zero past the last row/column) and eps = 1e-3.
    """

    name = "tv-charbonnier"

    def __init__(self, eps: float = CHARBONNIER_EPS):
        self.eps = eps

    def _diffs(self, x: np.ndarray):
        dh = np.zeros_like(x)
        dv = np.zeros_like(x)
        dh[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
        dv[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
        return dh, dv

    def score(self, img: Image) -> float:
        dh, dv = self._diffs(img.planes)
        t = np.sqrt(dh * dh + dv * dv + self.eps * self.eps)
        return float(t.sum() / img.n_samples)

    def grad(self, img: Image) -> GradientField:
        x = img.planes
        dh, dv = self._diffs(x)
        t = np.sqrt(dh * dh + dv * dv + self.eps * self.eps)
        u = dh / t
        v = dv / t
        g = -(u + v)
        g[:, :, 1:] += u[:, :, :-1]
        g[:, 1:, :] += v[:, :-1, :]
        return GradientField(g / img.n_samples)


_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def _pad_reflect(x2d: np.ndarray) -> np.ndarray:
    h, w = x2d.shape
    mode = "reflect" if h >= 2 and w >= 2 else "edge"
    return np.pad(x2d, 1, mode=mode)


def _conv3x3(x2d: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    p = _pad_reflect(x2d)
    h, w = x2d.shape
    out = np.zeros((h, w))
    for dr in range(3):
        for dc in range(3):
            k = kernel[dr, dc]
            if k != 0.0:
                out += k * p[dr:dr + h, dc:dc + w]
    return out


def _conv3x3_adjoint(y2d: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # scatter into the padded frame, then fold pad rows/cols back onto
    # their reflect-mode sources
    h, w = y2d.shape
    zp = np.zeros((h + 2, w + 2))
    for dr in range(3):
        for dc in range(3):
            k = kernel[dr, dc]
            if k != 0.0:
                zp[dr:dr + h, dc:dc + w] += k * y2d
    if h >= 2 and w >= 2:
        zr = zp[1:h + 1, :].copy()
        zr[1, :] += zp[0, :]
        zr[h - 2, :] += zp[h + 1, :]
        g = zr[:, 1:w + 1].copy()
        g[:, 1] += zr[:, 0]
        g[:, w - 2] += zr[:, w + 1]
        return g
    # edge-mode fallback for degenerate 1-pixel dimensions
    g = zp[1:h + 1, 1:w + 1].copy()
    g[0, :] += zp[0, 1:w + 1]
    g[-1, :] += zp[h + 1, 1:w + 1]
    g[:, 0] += zp[1:h + 1, 0]
    g[:, -1] += zp[1:h + 1, w + 1]
    g[0, 0] += zp[0, 0]
    g[0, -1] += zp[0, w + 1]
    g[-1, 0] += zp[h + 1, 0]
    g[-1, -1] += zp[h + 1, w + 1]
    return g


class Sharpness:
    """Negated mean squared Laplacian response; rewards sharpness.

    score = -(1/n) * sum_p (L*x)_p^2 with the 3x3 Laplacian and reflect
    padding, so sharper content scores lower (better).
    """

    name = "sharpness"

    def score(self, img: Image) -> float:
        total = 0.0
        for ch in range(img.channels):
            y = _conv3x3(img.planes[ch], _LAPLACIAN)
            total += float(np.dot(y.reshape(-1), y.reshape(-1)))
        return -total / img.n_samples

    def grad(self, img: Image) -> GradientField:
        g = np.empty_like(img.planes)
        for ch in range(img.channels):
            y = _conv3x3(img.planes[ch], _LAPLACIAN)
            g[ch] = _conv3x3_adjoint(y, _LAPLACIAN)
        return GradientField(g * (-2.0 / img.n_samples))


class Blockiness:
    """Mean squared jump across the 8-pixel block grid; penalizes blocking.

    Pairs straddle columns/rows at multiples of 8; with no such boundary
    (image smaller than 9 pixels) the score is 0 by convention.
    """

    name = "blockiness"

    def __init__(self, grid: int = BLOCK_GRID):
        self.grid = grid

    def _boundaries(self, n: int) -> np.ndarray:
        return np.arange(self.grid, n, self.grid)

    def _terms(self, x: np.ndarray):
        cols = self._boundaries(x.shape[2])
        rows = self._boundaries(x.shape[1])
        dcol = x[:, :, cols - 1] - x[:, :, cols]
        drow = x[:, rows - 1, :] - x[:, rows, :]
        n_pairs = dcol.size + drow.size
        return cols, rows, dcol, drow, n_pairs

    def score(self, img: Image) -> float:
        _, _, dcol, drow, n_pairs = self._terms(img.planes)
        if n_pairs == 0:
            return 0.0
        return float((np.sum(dcol * dcol) + np.sum(drow * drow)) / n_pairs)

    def grad(self, img: Image) -> GradientField:
        x = img.planes
        cols, rows, dcol, drow, n_pairs = self._terms(x)
        g = np.zeros_like(x)
        if n_pairs == 0:
            return GradientField(g)
        s = 2.0 / n_pairs
        g[:, :, cols - 1] += s * dcol
        g[:, :, cols] -= s * dcol
        g[:, rows - 1, :] += s * drow
        g[:, rows, :] -= s * drow
        return GradientField(g)


class ScaledMetric:
    """Wrap a metric, multiplying its score and gradient by a factor."""

    def __init__(self, inner, factor: float, name: str | None = None):
        self.inner = inner
        self.factor = float(factor)
        self.name = name if name is not None else f"scaled({inner.name})"

    def score(self, img: Image) -> float:
        return self.factor * self.inner.score(img)

    def grad(self, img: Image) -> GradientField:
        return GradientField(self.factor * self.inner.grad(img).planes)


class ExternalMetric:
    """A metric whose score and input gradient were precomputed into an
    NGF file (typically by the neural bridge).  Evaluation only checks
    the geometry of the supplied image; the stored values are returned
    unchanged, so smoothing an external metric is a mathematical no-op.
    """

    def __init__(self, path):
        ev, recorded = load_ngf(path)
        self.name = f"external:{path}"
        self.recorded_name = recorded
        self._eval = ev

    def _check(self, img: Image):
        if img.geometry() != self._eval.gradient.geometry():
            raise ValidationError(
                f"{self.name}: stored gradient geometry "
                f"{self._eval.gradient.geometry()} does not match image "
                f"{img.geometry()}")

    def score(self, img: Image) -> float:
        self._check(img)
        return self._eval.score

    def grad(self, img: Image) -> GradientField:
        self._check(img)
        return self._eval.gradient


_BUILTINS = {
    "tv-charbonnier": TvCharbonnier,
    "sharpness": Sharpness,
    "blockiness": Blockiness,
}

BUILTIN_METRIC_IDS = tuple(_BUILTINS)


def resolve_metric(spec):
    """Turn a metric id string into a metric object; pass objects through."""
    if isinstance(spec, str):
        if spec in _BUILTINS:
            return _BUILTINS[spec]()
        if spec.startswith("external:"):
            return ExternalMetric(spec[len("external:"):])
        raise ValidationError(f"unknown metric id {spec!r}")
    if hasattr(spec, "score") and hasattr(spec, "grad"):
        return spec
    raise ValidationError(f"not a metric: {spec!r}")


def metric_id(spec) -> str:
    return spec if isinstance(spec, str) else spec.name


def score(metric, x: Image) -> float:
    return resolve_metric(metric).score(x)


def grad(metric, x: Image) -> GradientField:
    return resolve_metric(metric).grad(x)


def evaluate(metric, x: Image) -> MetricEvaluation:
    m = resolve_metric(metric)
    return MetricEvaluation(m.score(x), m.grad(x))


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

AUTO = "auto"


@dataclass(frozen=True)
class MetricEnsembleSpec:
    """A weighted collection of metrics plus the global strength knob.

    entries: (metric id or object, base weight or "auto").  Auto weights
    are resolved by calibration (hybrid step-based or warm-up based)
    before any optimization; the effective weight of a member is always
    alpha * base_weight.  Optional smoothing applies per member.
    """

    entries: tuple
    alpha: float = 1.0
    smoothing: object = None  # SmoothingConfig or None

    def __post_init__(self):
        entries = tuple((m, w) for m, w in self.entries)
        if not entries:
            raise ValidationError("ensemble needs at least one entry")
        for _, w in entries:
            if w != AUTO:
                wf = float(w)
                if not np.isfinite(wf) or wf < 0:
                    raise ValidationError(f"bad ensemble weight {w!r}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValidationError(f"alpha must be finite and >= 0, got {self.alpha}")
        object.__setattr__(self, "entries", entries)

    @property
    def n_members(self) -> int:
        return len(self.entries)

    def member_ids(self) -> list[str]:
        return [metric_id(m) for m, _ in self.entries]

    def is_resolved(self) -> bool:
        return all(w != AUTO for _, w in self.entries)

    def with_weights(self, weights) -> "MetricEnsembleSpec":
        if len(weights) != len(self.entries):
            raise ValidationError("weight count does not match entries")
        entries = tuple((m, float(w)) for (m, _), w in zip(self.entries, weights))
        return MetricEnsembleSpec(entries, self.alpha, self.smoothing)


def member_gradient(spec: MetricEnsembleSpec, member, x: Image) -> GradientField:
    """Gradient of one member at x, smoothed when the ensemble asks for it."""
    from .smoothing import smooth_grad

    m = resolve_metric(member)
    if spec.smoothing is not None:
        return smooth_grad(m, x, spec.smoothing)
    return m.grad(x)


def ensemble_grad(spec: MetricEnsembleSpec, x: Image) -> GradientField:
    """Weighted ensemble gradient sum_i (alpha * w_i) * grad b_i(x).

    Each member is evaluated once and accumulated; requires resolved
    (numeric) weights.
    """
    if not spec.is_resolved():
        raise ValidationError("ensemble has unresolved 'auto' weights")
    acc = np.zeros(x.geometry())
    for member, w in spec.entries:
        g = member_gradient(spec, member, x)
        if g.geometry() != x.geometry():
            raise ValidationError(f"member {metric_id(member)} gradient geometry mismatch")
        acc += (spec.alpha * float(w)) * g.planes
    return GradientField(acc)


# ---------------------------------------------------------------------------
# NGF interchange
# ---------------------------------------------------------------------------

_NGF_MAGIC = b"NGF1"


def save_ngf(ev: MetricEvaluation, name: str, path) -> None:
    if not name:
        raise ValidationError("NGF metric name must be non-empty")
    g = ev.gradient
    blob = name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_NGF_MAGIC)
        f.write(struct.pack("<IIII", g.width, g.height, g.channels, len(blob)))
        f.write(blob)
        f.write(struct.pack("<d", ev.score))
        f.write(np.ascontiguousarray(g.planes, dtype="<f4").tobytes())


def load_ngf(path, expected: Image | None = None) -> tuple[MetricEvaluation, str]:
    """Read an NGF file; optionally validate geometry against an image."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    if buf[:4] != _NGF_MAGIC:
        raise FormatError(f"{path}: bad NGF magic {buf[:4]!r}")
    if len(buf) < 20:
        raise FormatError(f"{path}: truncated NGF header")
    width, height, channels, name_len = struct.unpack_from("<IIII", buf, 4)
    pos = 20
    name_raw = buf[pos:pos + name_len]
    if len(name_raw) != name_len:
        raise FormatError(f"{path}: truncated NGF name")
    pos += name_len
    if len(buf) < pos + 8:
        raise FormatError(f"{path}: truncated NGF score")
    (score_val,) = struct.unpack_from("<d", buf, pos)
    pos += 8
    need = width * height * channels
    payload = buf[pos:pos + 4 * need]
    if len(payload) != 4 * need:
        raise FormatError(f"{path}: truncated NGF payload")
    a = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(a)) or not np.isfinite(score_val):
        raise ValidationError(f"{path}: non-finite gradient")
    field = GradientField(a.reshape(channels, height, width))
    if expected is not None and field.geometry() != expected.geometry():
        raise ValidationError(
            f"{path}: gradient geometry {field.geometry()} does not match "
            f"expected image {expected.geometry()}")
    return MetricEvaluation(float(score_val), field), name_raw.decode("utf-8")
