"""Hybrid intra codec: orthonormal block DCT, uniform quantization with a
QP-derived step, Exp-Golomb entropy coding, and a decodable bitstream.

There is no spatial prediction: the rate-distortion search space is block
partitioning (4x4 / 16x16) and a per-macroblock QP offset, so blocks code
their own DCT coefficients.  Samples are shifted by -0.5 before the
transform (and back after) so a constant mid-gray block costs one bit.

The step 2^((QP - 4)/6) is an 8-bit-domain quantity, so the coding path
works on samples scaled by 255: blocks are transformed as
(x - 0.5) * 255 and reconstructions divide back to [0, 1].  Rate,
distortion and the Lagrangian stay in consistent 8-bit units across the
QP range while image I/O and metrics remain in [0, 1].

Bitstream file layout (little-endian header): magic ``LNRC``; u8
version=1; u16 width; u16 height; u8 channels; u8 base_qp; then the bit
payload, final byte zero-padded.  Macroblock syntax: 1 partition flag bit
(0 = whole16, 1 = split4), se(delta_qp), then coefficient blocks in
raster order; planes in Y-Cb-Cr order.  Chroma planes always use the
fixed +3 QP offset (the header does not carry it).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .image import (Image, MACROBLOCK, crop_planes, pad_planes, rgb_to_ycbcr,
                    ycbcr_to_rgb)

QP_MIN, QP_MAX = 0, 51
CHROMA_QP_OFFSET = 3
PIXEL_SCALE = 255.0  # codec-internal 8-bit units per [0,1] pixel unit
_MAGIC = b"LNRC"
_VERSION = 1
_HEADER = struct.Struct("<4sBHHBB")
HEADER_BITS = _HEADER.size * 8


def delta_of_qp(qp: int) -> float:
    """Quantization step 2^((qp - 4) / 6)."""
    if not (QP_MIN <= qp <= QP_MAX):
        raise ValidationError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {qp}")
    return 2.0 ** ((qp - 4) / 6.0)


def effective_qp(base_qp: int, delta_qp: int, chroma: bool) -> int:
    q = base_qp + delta_qp + (CHROMA_QP_OFFSET if chroma else 0)
    return min(QP_MAX, max(QP_MIN, q))


@dataclass(frozen=True)
class QpParams:
    base_qp: int
    chroma_offset: int = CHROMA_QP_OFFSET
    delta_qp: int = 0

    def __post_init__(self):
        if not (QP_MIN <= self.base_qp <= QP_MAX):
            raise ValidationError(f"base_qp out of range: {self.base_qp}")

    def effective(self, chroma: bool = False) -> int:
        q = self.base_qp + self.delta_qp + (self.chroma_offset if chroma else 0)
        return min(QP_MAX, max(QP_MIN, q))


# ---------------------------------------------------------------------------
# transform
# ---------------------------------------------------------------------------

def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    d[0, :] = np.sqrt(1.0 / n)
    return d


_DCT = {4: _dct_matrix(4), 16: _dct_matrix(16)}


def _basis(n: int) -> np.ndarray:
    if n not in _DCT:
        raise ValidationError(f"block size must be 4 or 16, got {n}")
    return _DCT[n]


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a square 4x4 or 16x16 block."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValidationError(f"dct2 needs a square block, got {block.shape}")
    d = _basis(block.shape[0])
    return d @ block @ d.T

def idct2(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValidationError(f"idct2 needs a square block, got {coeffs.shape}")
    d = _basis(coeffs.shape[0])
    return d.T @ coeffs @ d


def dct2_many(blocks: np.ndarray) -> np.ndarray:
    """Batched dct2 over shape (m, n, n)."""
    d = _basis(blocks.shape[-1])
    return d @ blocks @ d.T


def idct2_many(coeffs: np.ndarray) -> np.ndarray:
    d = _basis(coeffs.shape[-1])
    return d.T @ coeffs @ d


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def quantize(coeffs: np.ndarray, delta: float) -> np.ndarray:
    """Uniform quantizer, round half away from zero."""
    if delta <= 0:
        raise ValidationError("quantizer step must be > 0")
    c = np.asarray(coeffs, dtype=np.float64)
    return (np.sign(c) * np.floor(np.abs(c) / delta + 0.5)).astype(np.int64)


def dequantize(levels: np.ndarray, delta: float) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * delta


# ---------------------------------------------------------------------------
# zigzag scan
# ---------------------------------------------------------------------------

def zigzag_order(n: int) -> np.ndarray:
    """Flattened indices in zigzag scan order for an n x n block."""
    order = []
    for s in range(2 * n - 1):
        rng_ = range(min(s, n - 1), max(0, s - n + 1) - 1, -1) if s % 2 == 0 \
            else range(max(0, s - n + 1), min(s, n - 1) + 1)
        for i in rng_:
            order.append(i * n + (s - i))
    return np.array(order, dtype=np.int64)


ZIGZAG = {4: zigzag_order(4), 16: zigzag_order(16)}
_UNZIGZAG = {n: np.argsort(z) for n, z in ZIGZAG.items()}


def to_zigzag(block_levels: np.ndarray) -> np.ndarray:
    n = block_levels.shape[0]
    return block_levels.reshape(-1)[ZIGZAG[n]]


def from_zigzag(levels: np.ndarray) -> np.ndarray:
    n = int(round(len(levels) ** 0.5))
    return np.asarray(levels)[_UNZIGZAG[n]].reshape(n, n)


# ---------------------------------------------------------------------------
# bit I/O and Exp-Golomb codes
# ---------------------------------------------------------------------------

class BitWriter:
    __slots__ = ("_bytes", "_acc", "_nacc", "bit_length")

    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nacc = 0
        self.bit_length = 0

    def write_bits(self, value: int, count: int) -> None:
        self._acc = (self._acc << count) | (value & ((1 << count) - 1))
        self._nacc += count
        self.bit_length += count
        while self._nacc >= 8:
            self._nacc -= 8
            self._bytes.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def write_ue(self, v: int) -> None:
        if v < 0:
            raise ValidationError("ue(v) needs v >= 0")
        nb = (v + 1).bit_length()
        self.write_bits(v + 1, 2 * nb - 1)  # nb-1 leading zeros then v+1

    def write_se(self, v: int) -> None:
        self.write_ue(2 * v - 1 if v > 0 else -2 * v)

    def getvalue(self) -> bytes:
        out = bytes(self._bytes)
        if self._nacc:
            out += bytes([(self._acc << (8 - self._nacc)) & 0xFF])
        return out


class BitReader:
    __slots__ = ("_data", "_pos", "_limit")

    def __init__(self, data: bytes, bit_length: int | None = None):
        self._data = data
        self._pos = 0
        self._limit = 8 * len(data) if bit_length is None else bit_length

    @property
    def position(self) -> int:
        return self._pos

    def read_bit(self) -> int:
        if self._pos >= self._limit:
            raise FormatError("bitstream truncated")
        b = (self._data[self._pos >> 3] >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return b

    def read_bits(self, count: int) -> int:
        v = 0
        for _ in range(count):
            v = (v << 1) | self.read_bit()
        return v

    def read_ue(self) -> int:
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
            if zeros > 63:
                raise FormatError("malformed Exp-Golomb code")
        return ((1 << zeros) | self.read_bits(zeros)) - 1

    def read_se(self) -> int:
        u = self.read_ue()
        return (u + 1) // 2 if u & 1 else -(u // 2)


def ue_length(v: int) -> int:
    return 2 * (v + 1).bit_length() - 1


def se_length(v: int) -> int:
    return ue_length(2 * v - 1 if v > 0 else -2 * v)


def _write_block(w: BitWriter, levels: np.ndarray) -> None:
    nz = np.nonzero(levels)[0]
    eob = int(nz[-1]) + 1 if nz.size else 0
    w.write_ue(eob)
    for v in levels[:eob]:
        w.write_se(int(v))


def code_block(levels: np.ndarray) -> tuple[int, bytes]:
    """Entropy-code one zigzag-ordered level vector.

    The end-of-block position (index after the last nonzero, 0 when all
    zero) is coded as ue(v), then each level up to it as se(v).  Returns
    the exact bit count and the packed bits (last byte zero-padded).
    """
    w = BitWriter()
    _write_block(w, np.asarray(levels, dtype=np.int64))
    return w.bit_length, w.getvalue()


def _read_block(r: BitReader, n_levels: int) -> np.ndarray:
    eob = r.read_ue()
    if eob > n_levels:
        raise FormatError(f"EOB {eob} exceeds block size {n_levels}")
    out = np.zeros(n_levels, dtype=np.int64)
    for i in range(eob):
        out[i] = r.read_se()
    return out


def decode_block(data: bytes, n_levels: int, bit_length: int | None = None) -> np.ndarray:
    return _read_block(BitReader(data, bit_length), n_levels)


def block_bits(levels: np.ndarray) -> int:
    """Exact entropy-coded size of one zigzag-ordered level vector."""
    levels = np.asarray(levels, dtype=np.int64)
    nz = np.nonzero(levels)[0]
    eob = int(nz[-1]) + 1 if nz.size else 0
    bits = ue_length(eob)
    for v in levels[:eob]:
        bits += se_length(int(v))
    return bits


def block_bits_many(levels2d: np.ndarray) -> np.ndarray:
    """Vectorized block_bits over shape (m, k) zigzag level rows."""
    lv = np.asarray(levels2d, dtype=np.int64)
    m, k = lv.shape
    mapped = np.where(lv > 0, 2 * lv - 1, -2 * lv)
    # frexp exponent of an exact integer v+1 equals its bit length
    sym_bits = 2 * np.frexp((mapped + 1).astype(np.float64))[1].astype(np.int64) - 1
    nzmask = lv != 0
    has = nzmask.any(axis=1)
    eob = np.where(has, k - np.argmax(nzmask[:, ::-1], axis=1), 0)
    csum = np.cumsum(sym_bits, axis=1)
    idx = np.maximum(eob - 1, 0)[:, None]
    coeff_bits = np.where(eob > 0, np.take_along_axis(csum, idx, axis=1)[:, 0], 0)
    eob_bits = 2 * np.frexp((eob + 1).astype(np.float64))[1].astype(np.int64) - 1
    return eob_bits + coeff_bits


# ---------------------------------------------------------------------------
# block reconstruction
# ---------------------------------------------------------------------------

def center_scale(samples01: np.ndarray) -> np.ndarray:
    """[0,1] samples -> zero-centered 8-bit-domain values."""
    return (np.asarray(samples01, dtype=np.float64) - 0.5) * PIXEL_SCALE


def unscale_clip(coded: np.ndarray) -> np.ndarray:
    """8-bit-domain reconstruction -> clamped [0,1] samples."""
    return np.clip(coded / PIXEL_SCALE + 0.5, 0.0, 1.0)


def reconstruct_block(samples: np.ndarray, qp: int) -> tuple[np.ndarray, int]:
    """Transform-quantize-code one [0,1] block; returns (clamped recon, bits)."""
    delta = delta_of_qp(qp)
    levels = quantize(dct2(center_scale(samples)), delta)
    bits = block_bits(to_zigzag(levels))
    recon = unscale_clip(idct2(dequantize(levels, delta)))
    return recon, bits


# ---------------------------------------------------------------------------
# bitstream container
# ---------------------------------------------------------------------------

PARTITION_WHOLE16 = "whole16"
PARTITION_SPLIT4 = "split4"


@dataclass(frozen=True)
class MacroblockDecision:
    """One macroblock's coding choice: partition, QP offset and the
    zigzag-ordered quantized levels (1 block of 256 or 16 blocks of 16)."""

    partition: str
    delta_qp: int
    levels: tuple

    def __post_init__(self):
        if self.partition == PARTITION_WHOLE16:
            if len(self.levels) != 1 or len(self.levels[0]) != 256:
                raise ValidationError("whole16 carries one 256-level block")
        elif self.partition == PARTITION_SPLIT4:
            if len(self.levels) != 16 or any(len(b) != 16 for b in self.levels):
                raise ValidationError("split4 carries 16 blocks of 16 levels")
        else:
            raise ValidationError(f"unknown partition {self.partition!r}")


@dataclass(frozen=True)
class Bitstream:
    width: int
    height: int
    channels: int
    base_qp: int
    payload: bytes
    payload_bits: int

    @property
    def bit_length(self) -> int:
        """Exact coded size: header plus payload bits, before byte padding."""
        return HEADER_BITS + self.payload_bits

    def to_bytes(self) -> bytes:
        return _HEADER.pack(_MAGIC, _VERSION, self.width, self.height,
                            self.channels, self.base_qp) + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Bitstream":
        if len(buf) < _HEADER.size:
            raise FormatError("truncated bitstream header")
        magic, version, width, height, channels, base_qp = _HEADER.unpack_from(buf)
        if magic != _MAGIC:
            raise FormatError(f"bad bitstream magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        if channels not in (1, 3) or width < 1 or height < 1 or base_qp > QP_MAX:
            raise FormatError("bad bitstream header fields")
        payload = buf[_HEADER.size:]
        return cls(width, height, channels, base_qp, payload, 8 * len(payload))

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Bitstream":
        try:
            with open(path, "rb") as f:
                return cls.from_bytes(f.read())
        except OSError as e:
            raise FormatError(f"cannot read {path}: {e}") from e


def padded_geometry(width: int, height: int) -> tuple[int, int]:
    return (height + MACROBLOCK - 1) // MACROBLOCK * MACROBLOCK, \
           (width + MACROBLOCK - 1) // MACROBLOCK * MACROBLOCK


def assemble(decisions, width: int, height: int, channels: int, base_qp: int) -> Bitstream:
    """Serialize per-plane macroblock decisions into a decodable stream.

    ``decisions[plane][mb]`` in raster order over the padded grid.
    """
    ph, pw = padded_geometry(width, height)
    n_mb = (ph // MACROBLOCK) * (pw // MACROBLOCK)
    if len(decisions) != channels or any(len(p) != n_mb for p in decisions):
        raise ValidationError("decisions do not cover the padded grid")
    w = BitWriter()
    for plane in decisions:
        for d in plane:
            w.write_bits(0 if d.partition == PARTITION_WHOLE16 else 1, 1)
            w.write_se(d.delta_qp)
            for blk in d.levels:
                _write_block(w, np.asarray(blk, dtype=np.int64))
    return Bitstream(width, height, channels, base_qp, w.getvalue(), w.bit_length)


def parse(bs: Bitstream) -> list[list[MacroblockDecision]]:
    """Recover the exact macroblock decisions from a bitstream."""
    ph, pw = padded_geometry(bs.width, bs.height)
    n_mb = (ph // MACROBLOCK) * (pw // MACROBLOCK)
    r = BitReader(bs.payload, bs.payload_bits)
    out = []
    for _ in range(bs.channels):
        plane = []
        for _ in range(n_mb):
            split = r.read_bit()
            dqp = r.read_se()
            if split:
                blocks = tuple(_read_block(r, 16) for _ in range(16))
                plane.append(MacroblockDecision(PARTITION_SPLIT4, dqp, blocks))
            else:
                blocks = (_read_block(r, 256),)
                plane.append(MacroblockDecision(PARTITION_WHOLE16, dqp, blocks))
        out.append(plane)
    return out


def reconstruct_planes(decisions, channels: int, padded_h: int, padded_w: int,
                       base_qp: int) -> np.ndarray:
    """Pixel reconstruction of decoded decisions on the padded grid.

    This is the single reconstruction path shared by the encoder (for its
    reported reconstruction) and the decoder, which is what makes
    decode(assemble(d)) bit-identical to the encoder output.
    """
    planes = np.empty((channels, padded_h, padded_w))
    mb_cols = padded_w // MACROBLOCK
    for ch in range(channels):
        chroma = channels == 3 and ch > 0
        for i, d in enumerate(decisions[ch]):
            r0 = (i // mb_cols) * MACROBLOCK
            c0 = (i % mb_cols) * MACROBLOCK
            delta = delta_of_qp(effective_qp(base_qp, d.delta_qp, chroma))
            if d.partition == PARTITION_WHOLE16:
                coeffs = dequantize(from_zigzag(d.levels[0]), delta)
                planes[ch, r0:r0 + 16, c0:c0 + 16] = unscale_clip(idct2(coeffs))
            else:
                for b, blk in enumerate(d.levels):
                    br = r0 + (b // 4) * 4
                    bc = c0 + (b % 4) * 4
                    coeffs = dequantize(from_zigzag(blk), delta)
                    planes[ch, br:br + 4, bc:bc + 4] = unscale_clip(idct2(coeffs))
    return planes


def reconstruction_image(decisions, width: int, height: int, channels: int,
                         base_qp: int) -> Image:
    """Cropped, color-restored reconstruction for given decisions."""
    ph, pw = padded_geometry(width, height)
    planes = reconstruct_planes(decisions, channels, ph, pw, base_qp)
    planes = crop_planes(planes, height, width)
    if channels == 3:
        planes = np.clip(ycbcr_to_rgb(planes), 0.0, 1.0)
    return Image(planes)


def decode(bs: Bitstream) -> Image:
    """Decode a bitstream into the reconstruction the encoder computed."""
    return reconstruction_image(parse(bs), bs.width, bs.height, bs.channels,
                                bs.base_qp)


def simple_roundtrip(img: Image, qp: int) -> Image:
    """Encode-decode with whole16 blocks and no RDO; the 'precompressed'
    degradation model for synthetic content."""
    if not (QP_MIN <= qp <= QP_MAX):
        raise ValidationError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {qp}")
    planes = rgb_to_ycbcr(img.planes) if img.channels == 3 else img.planes
    padded = pad_planes(planes)
    out = np.empty_like(padded)
    for ch in range(img.channels):
        chroma = img.channels == 3 and ch > 0
        eff = effective_qp(qp, 0, chroma)
        for r in range(0, padded.shape[1], MACROBLOCK):
            for c in range(0, padded.shape[2], MACROBLOCK):
                rec, _ = reconstruct_block(padded[ch, r:r + 16, c:c + 16], eff)
                out[ch, r:r + 16, c:c + 16] = rec
    out = crop_planes(out, img.height, img.width)
    if img.channels == 3:
        out = np.clip(ycbcr_to_rgb(out), 0.0, 1.0)
    return Image(out)
