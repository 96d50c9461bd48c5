"""File interchange with the codec laboratory.

The bridge talks to the encoder exclusively through files: images come in
as PGM (P5) / PPM (P6, maxval 255) or raw ``.imgf32``; gradients go out
as NGF.  Layouts (little-endian):

* ``.imgf32``: magic ``IMGF``; u32 width, height, channels; then
  width*height*channels float32 samples, channel-planar, row-major.
* NGF: magic ``NGF1``; u32 width, height, channels, name_len; name_len
  bytes UTF-8 metric name; f64 score; float32 gradient samples,
  channel-planar, row-major.
"""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    pass


def _read_token(buf: bytes, pos: int):
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


def load_image(path) -> np.ndarray:
    """Load an image as float64 planes (channels, height, width) in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] == b"IMGF":
        w, h, c = struct.unpack_from("<III", buf, 4)
        need = w * h * c
        payload = buf[16:16 + 4 * need]
        if len(payload) != 4 * need:
            raise FormatError(f"{path}: truncated imgf32 payload")
        a = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        return np.clip(a, 0.0, 1.0).reshape(c, h, w)
    if buf[:2] in (b"P5", b"P6"):
        channels = 1 if buf[:2] == b"P5" else 3
        _, pos = _read_token(buf, 0)
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        maxval_tok, pos = _read_token(buf, pos)
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
        if maxval != 255:
            raise FormatError(f"{path}: maxval must be 255")
        pos += 1
        need = w * h * channels
        raw = buf[pos:pos + need]
        if len(raw) != need:
            raise FormatError(f"{path}: truncated payload")
        a = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
        if channels == 1:
            return a.reshape(1, h, w)
        return a.reshape(h, w, 3).transpose(2, 0, 1)
    raise FormatError(f"{path}: unrecognized magic {buf[:4]!r}")


def save_ngf(path, name: str, score: float, gradient: np.ndarray) -> None:
    if not name:
        raise FormatError("NGF metric name must be non-empty")
    g = np.asarray(gradient, dtype=np.float64)
    if g.ndim != 3:
        raise FormatError("gradient must be (channels, height, width)")
    if not np.all(np.isfinite(g)) or not np.isfinite(score):
        raise FormatError("non-finite gradient or score")
    c, h, w = g.shape
    blob = name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(b"NGF1")
        f.write(struct.pack("<IIII", w, h, c, len(blob)))
        f.write(blob)
        f.write(struct.pack("<d", float(score)))
        f.write(np.ascontiguousarray(g, dtype="<f4").tobytes())
