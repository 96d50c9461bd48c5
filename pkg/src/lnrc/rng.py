"""Deterministic random streams: SplitMix64-seeded xoshiro256++ with Box-Muller.

Every stochastic feature in the package draws from streams keyed on
(seed, stream index).  The key is hashed with SplitMix64's finalizer, the
xoshiro256++ state is expanded from it, and floating-point conversion is
fixed, so identical keys produce bit-identical output on every platform
and run.  Two generation paths exist: a scalar path (Python integers, one
stream) and a lockstep batch path (numpy uint64 vectors, many streams);
they produce bit-identical words and are cross-checked in the test suite.
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# float conversion: top 53 bits, shifted into (0, 1] so log() is safe
_INV53 = 2.0 ** -53


def _mix64(z: int) -> int:
    z &= _M64
    z = ((z ^ (z >> 30)) * _MIX1) & _M64
    z = ((z ^ (z >> 27)) * _MIX2) & _M64
    return z ^ (z >> 31)


def stream_state(seed: int, index: int) -> tuple[int, int, int, int]:
    """Expand (seed, index) into a 256-bit xoshiro256++ state.

    The pair is absorbed with two SplitMix64 finalizer rounds, then the
    four state words are consecutive SplitMix64 outputs, per the
    generator author's recommended seeding procedure.
    """
    h = _mix64((seed & _M64) ^ _GOLDEN)
    h = _mix64(h ^ ((index * _MIX1) & _M64))
    words = []
    for _ in range(4):
        h = (h + _GOLDEN) & _M64
        words.append(_mix64(h))
    if not any(words):  # all-zero state is the one forbidden xoshiro state
        words[3] = 1
    return tuple(words)


def _u64_scalar(seed: int, index: int, n: int) -> np.ndarray:
    s0, s1, s2, s3 = stream_state(seed, index)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        tmp = (s0 + s3) & _M64
        out[i] = (((tmp << 23) & _M64 | (tmp >> 41)) + s0) & _M64
        t = (s1 << 17) & _M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _M64
    return out


def _u64_batch(seed: int, indices, n: int) -> np.ndarray:
    states = np.array([stream_state(seed, i) for i in indices], dtype=np.uint64)
    s0 = states[:, 0].copy()
    s1 = states[:, 1].copy()
    s2 = states[:, 2].copy()
    s3 = states[:, 3].copy()
    out = np.empty((len(states), n), dtype=np.uint64)
    c23, c41, c17, c45, c19 = (np.uint64(k) for k in (23, 41, 17, 45, 19))
    for j in range(n):
        tmp = s0 + s3
        out[:, j] = ((tmp << c23) | (tmp >> c41)) + s0
        t = s1 << c17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << c45) | (s3 >> c19)
    return out


# below this many streams the per-step numpy overhead of the lockstep path
# exceeds the Python-int cost of running streams one by one
_BATCH_THRESHOLD = 16


def u64_words(seed: int, indices, n: int) -> np.ndarray:
    """Raw generator words for several streams, shape (len(indices), n)."""
    indices = list(indices)
    if len(indices) >= _BATCH_THRESHOLD:
        return _u64_batch(seed, indices, n)
    return np.stack([_u64_scalar(seed, i, n) for i in indices])


def _box_muller(words: np.ndarray) -> np.ndarray:
    """Map an even-length row (or rows) of u64 words to standard normals."""
    u = ((words >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV53
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    ang = (2.0 * np.pi) * u2
    z = np.empty_like(u)
    z[..., 0::2] = r * np.cos(ang)
    z[..., 1::2] = r * np.sin(ang)
    return z


def normals(seed: int, index: int, n: int) -> np.ndarray:
    """n standard normal doubles from stream (seed, index)."""
    m = n + (n & 1)
    z = _box_muller(_u64_scalar(seed, index, m)[None, :])
    return z[0, :n]


def normals_many(seed: int, indices, n: int) -> np.ndarray:
    """Standard normals for several streams, shape (len(indices), n).

    Row i is bit-identical to normals(seed, indices[i], n).
    """
    m = n + (n & 1)
    z = _box_muller(u64_words(seed, indices, m))
    return z[:, :n]
