"""Pixel containers, image I/O, tiling and elementary full-reference measures.

Images are channel-planar float64 buffers in [0, 1] (enforced on every
load/decode path; in-memory intermediates such as perturbed metric inputs
or training-time reconstructions may leave the range).  Supported file
formats:

* PGM (P5) / PPM (P6), binary, maxval 255; 8-bit samples map to v/255.
* ``.imgf32``: magic ``IMGF``, little-endian u32 width/height/channels,
  then width*height*channels little-endian float32 samples,
  channel-planar, row-major.  Loads clamp to [0, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

MACROBLOCK = 16


def _as_planes(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, :, :]
    if a.ndim != 3:
        raise ValidationError(f"planar buffer must be 2-D or 3-D, got shape {a.shape}")
    if a.shape[0] not in (1, 3):
        raise ValidationError(f"channel count must be 1 or 3, got {a.shape[0]}")
    if a.shape[1] < 1 or a.shape[2] < 1:
        raise ValidationError(f"empty image geometry {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("non-finite samples in pixel buffer")
    return a


@dataclass(frozen=True)
class Image:
    """Planar pixel buffer; ``planes`` has shape (channels, height, width)."""

    planes: np.ndarray

    def __post_init__(self):
        # own a frozen copy: freezing the caller's buffer in place would be
        # a surprising side effect
        a = _as_planes(self.planes).copy()
        a.flags.writeable = False
        object.__setattr__(self, "planes", a)

    @property
    def channels(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def n_samples(self) -> int:
        return self.planes.size

    @property
    def data(self) -> np.ndarray:
        """Flattened channel-planar, row-major view."""
        return self.planes.reshape(-1)

    def geometry(self) -> tuple[int, int, int]:
        return self.planes.shape


@dataclass(frozen=True)
class GradientField:
    """Per-pixel signed values with Image geometry (metric score per unit
    pixel change). All entries must be finite."""

    planes: np.ndarray

    def __post_init__(self):
        a = _as_planes(self.planes).copy()
        a.flags.writeable = False
        object.__setattr__(self, "planes", a)

    @property
    def channels(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def n_samples(self) -> int:
        return self.planes.size

    def geometry(self) -> tuple[int, int, int]:
        return self.planes.shape

    def norm(self) -> float:
        return float(np.linalg.norm(self.planes.reshape(-1)))


@dataclass(frozen=True)
class BlockView:
    """A size x size window of one channel of a parent image.

    The block must lie fully inside the parent; images are padded to
    multiples of 16 before tiling so this always holds for codec blocks.
    """

    image: Image = field(repr=False)
    channel: int
    row: int
    col: int
    size: int

    def __post_init__(self):
        if self.size not in (4, 16):
            raise ValidationError(f"block size must be 4 or 16, got {self.size}")
        if not (0 <= self.channel < self.image.channels):
            raise ValidationError("block channel outside parent image")
        if self.row < 0 or self.col < 0 or self.row + self.size > self.image.height \
                or self.col + self.size > self.image.width:
            raise ValidationError("block extends outside parent image")

    @property
    def samples(self) -> np.ndarray:
        return self.image.planes[self.channel,
                                 self.row:self.row + self.size,
                                 self.col:self.col + self.size]


def check_same_geometry(a, b) -> None:
    if a.geometry() != b.geometry():
        raise ValidationError(f"geometry mismatch: {a.geometry()} vs {b.geometry()}")


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _read_pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments, return next token
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PNM header")
    return buf[start:pos], pos


def load_image(path) -> Image:
    """Load a PGM (P5), PPM (P6) or .imgf32 file into an Image in [0, 1]."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    if buf[:2] in (b"P5", b"P6"):
        return _load_pnm(buf, path)
    if buf[:4] == b"IMGF":
        return _load_imgf32(buf, path)
    raise FormatError(f"{path}: unrecognized magic {buf[:4]!r}")


def _load_pnm(buf: bytes, path) -> Image:
    magic, pos = _read_pnm_token(buf, 0)
    channels = 1 if magic == b"P5" else 3
    try:
        w_tok, pos = _read_pnm_token(buf, pos)
        h_tok, pos = _read_pnm_token(buf, pos)
        maxval_tok, pos = _read_pnm_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (ValueError, FormatError) as e:
        raise FormatError(f"{path}: bad PNM header") from e
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # exactly one whitespace byte after maxval
    need = width * height * channels
    raw = buf[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"{path}: truncated payload ({len(raw)} of {need} bytes)")
    a = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        planes = a.reshape(1, height, width)
    else:
        # interleaved RGB on disk -> channel-planar in memory
        planes = a.reshape(height, width, 3).transpose(2, 0, 1)
    return Image(planes)


def _load_imgf32(buf: bytes, path) -> Image:
    if len(buf) < 16:
        raise FormatError(f"{path}: truncated imgf32 header")
    width, height, channels = struct.unpack_from("<III", buf, 4)
    if channels not in (1, 3) or width < 1 or height < 1:
        raise FormatError(f"{path}: bad imgf32 geometry {width}x{height}x{channels}")
    need = width * height * channels
    payload = buf[16:16 + 4 * need]
    if len(payload) != 4 * need:
        raise FormatError(f"{path}: truncated imgf32 payload")
    a = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise FormatError(f"{path}: non-finite samples in imgf32 payload")
    a = np.clip(a, 0.0, 1.0)
    return Image(a.reshape(channels, height, width))


def save_image(img: Image, path) -> None:
    """Write PGM/PPM (by channel count) or .imgf32 (by extension).

    8-bit formats quantize with round-half-away-from-zero of 255*v after
    clamping; .imgf32 stores float32 samples verbatim.
    """
    path = str(path)
    if path.endswith(".imgf32"):
        with open(path, "wb") as f:
            f.write(b"IMGF")
            f.write(struct.pack("<III", img.width, img.height, img.channels))
            f.write(np.ascontiguousarray(img.planes, dtype="<f4").tobytes())
        return
    if path.endswith(".pgm"):
        if img.channels != 1:
            raise ValidationError("PGM holds a single channel; image has 3")
        magic = b"P5"
    elif path.endswith(".ppm"):
        if img.channels != 3:
            raise ValidationError("PPM holds 3 channels; image has 1")
        magic = b"P6"
    else:
        raise ValidationError(f"unsupported output extension for {path}")
    q = np.floor(np.clip(img.planes, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (img.width, img.height))
        if img.channels == 1:
            f.write(q[0].tobytes())
        else:
            f.write(q.transpose(1, 2, 0).tobytes())


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

def sse(a: Image, b: Image) -> float:
    """Sum of squared sample differences."""
    check_same_geometry(a, b)
    d = a.planes - b.planes
    return float(np.dot(d.reshape(-1), d.reshape(-1)))


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB with peak 1.0; +inf when the images are identical."""
    check_same_geometry(a, b)
    e = sse(a, b)
    if e == 0.0:
        return float("inf")
    mse = e / a.n_samples
    return float(10.0 * np.log10(1.0 / mse))


# ---------------------------------------------------------------------------
# padding and tiling
# ---------------------------------------------------------------------------

def pad_planes(planes: np.ndarray, multiple: int = MACROBLOCK) -> np.ndarray:
    """Edge-replicate each plane up to the next multiple of ``multiple``."""
    _, h, w = planes.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return planes.copy()
    return np.pad(planes, ((0, 0), (0, ph), (0, pw)), mode="edge")


def crop_planes(planes: np.ndarray, height: int, width: int) -> np.ndarray:
    return planes[:, :height, :width].copy()


def iter_blocks(img: Image, size: int = MACROBLOCK):
    """Yield BlockViews tiling every channel; dimensions must divide evenly."""
    if img.height % size or img.width % size:
        raise ValidationError(
            f"{img.height}x{img.width} does not tile by {size}; pad first")
    for ch in range(img.channels):
        for r in range(0, img.height, size):
            for c in range(0, img.width, size):
                yield BlockView(img, ch, r, c, size)


# ---------------------------------------------------------------------------
# BT.601 full-range color conversion (divergence from the unspecified
# matrix of the source protocol is documented in the README)
# ---------------------------------------------------------------------------

_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168735891647416, -0.331264108352584, 0.5],
    [0.5, -0.418687589158345, -0.081312410841655],
])
_YCC_OFFSET = np.array([0.0, 0.5, 0.5])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def rgb_to_ycbcr(planes: np.ndarray) -> np.ndarray:
    flat = planes.reshape(3, -1)
    out = _RGB2YCC @ flat + _YCC_OFFSET[:, None]
    return out.reshape(planes.shape)


def ycbcr_to_rgb(planes: np.ndarray) -> np.ndarray:
    flat = planes.reshape(3, -1)
    out = _YCC2RGB @ (flat - _YCC_OFFSET[:, None])
    return out.reshape(planes.shape)


def gradient_rgb_to_ycbcr(planes: np.ndarray) -> np.ndarray:
    """Adjoint transport of an RGB-domain gradient into YCbCr coordinates.

    With x_rgb = A x_ycc + o (A the inverse conversion), an inner product
    <g_rgb, dx_rgb> equals <A^T g_rgb, dx_ycc>.
    """
    flat = planes.reshape(3, -1)
    return (_YCC2RGB.T @ flat).reshape(planes.shape)


# ---------------------------------------------------------------------------
# synthetic degraded content
# ---------------------------------------------------------------------------

SYNTH_KINDS = ("gaussian-noise", "precompressed", "both")


def synth_ugc(img: Image, kind: str, strength: float, seed: int) -> Image:
    """Degrade an image to imitate consumer-captured content.

    gaussian-noise: add seeded N(0, strength^2) per sample, clamp.
    precompressed: round-trip through the block codec at QP = strength.
    both: noise at sigma = strength/1000 then a round-trip at
    QP = round(strength), so one knob drives a plausible pairing.
    Deterministic given (kind, strength, seed).
    """
    from . import rng

    if strength < 0:
        raise ValidationError("strength must be non-negative")
    if kind not in SYNTH_KINDS:
        raise ValidationError(f"unknown synth kind {kind!r}")

    def add_noise(image: Image, sigma: float) -> Image:
        if sigma == 0.0:
            return image
        noise = rng.normals(seed, 0, image.n_samples) * sigma
        return Image(np.clip(image.planes + noise.reshape(image.geometry()), 0.0, 1.0))

    def precompress(image: Image, qp: int) -> Image:
        from .blockcodec import simple_roundtrip
        return simple_roundtrip(image, qp)

    if kind == "gaussian-noise":
        return add_noise(img, strength)
    if kind == "precompressed":
        return precompress(img, int(round(strength)))
    return precompress(add_noise(img, strength / 1000.0), int(round(strength)))
