"""Fast built-in invariant battery behind the ``selftest`` subcommand.

Each check prints one pass/fail line; the battery returns exit code 0
when everything holds and 3 otherwise.  The pytest suite is the full
verification; this is a shipping smoke test.
"""

from __future__ import annotations

import numpy as np

from . import analysis, blockcodec, metrics, rdo, smoothing
from .image import Image, psnr


def _checks():
    rng = np.random.default_rng(20240901)

    def check_dct():
        b = rng.random((16, 16))
        c = blockcodec.dct2(b)
        assert abs(np.linalg.norm(c) - np.linalg.norm(b)) < 1e-10
        assert np.max(np.abs(blockcodec.idct2(c) - b)) < 1e-10

    def check_expgolomb():
        for _ in range(200):
            levels = rng.integers(-40, 41, size=16)
            nbits, data = blockcodec.code_block(levels)
            out = blockcodec.decode_block(data, 16, nbits)
            assert np.array_equal(out, levels)

    def check_gradient():
        img = Image(rng.random((1, 16, 16)))
        m = metrics.TvCharbonnier()
        g = m.grad(img).planes
        h = 1e-6
        for (ch, r, c) in [(0, 3, 4), (0, 0, 0), (0, 15, 15)]:
            p = img.planes.copy()
            p[ch, r, c] += h
            up = m.score(Image(p))
            p[ch, r, c] -= 2 * h
            dn = m.score(Image(p))
            fd = (up - dn) / (2 * h)
            assert abs(fd - g[ch, r, c]) < 1e-6 * max(1.0, abs(fd))

    def check_smoothing_determinism():
        img = Image(rng.random((1, 8, 8)))
        cfg = smoothing.SmoothingConfig(sigma=0.01, samples=5, seed=7)
        a = smoothing.smooth_grad("tv-charbonnier", img, cfg).planes
        b = smoothing.smooth_grad("tv-charbonnier", img, cfg).planes
        assert np.array_equal(a, b)

    def check_codec_honesty():
        img = Image(rng.random((1, 24, 40)))
        bs, recon, point = rdo.rdo_encode(img, rdo.RdoConfig(base_qp=31))
        decoded = blockcodec.decode(blockcodec.Bitstream.from_bytes(bs.to_bytes()))
        assert np.array_equal(decoded.planes, recon.planes)
        assert point.rate_bits == bs.bit_length

    def check_midgray_rate():
        img = Image(np.full((1, 32, 32), 0.5))
        bs, recon, _ = rdo.rdo_encode(img, rdo.RdoConfig(base_qp=31))
        n_mb = 4
        assert bs.bit_length == blockcodec.HEADER_BITS + 3 * n_mb
        assert psnr(img, recon) == float("inf")

    def check_bd_rate():
        qual = np.array([30.0, 32.0, 34.0, 36.0, 38.0])
        rate = np.array([0.1, 0.2, 0.4, 0.8, 1.6])
        assert analysis.bd_rate_points(rate, qual, rate, qual) == 0.0
        v = analysis.bd_rate_points(rate, qual, 2 * rate, qual)
        assert abs(v - 100.0) < 1e-9

    def check_mds():
        pts = rng.random((5, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt((diff ** 2).sum(axis=2))
        emb = analysis.mds_embed(d)
        rec = emb.coords[:, None, :] - emb.coords[None, :, :]
        drec = np.sqrt((rec ** 2).sum(axis=2))
        assert np.max(np.abs(drec - d)) < 1e-8

    def check_spearman():
        assert abs(analysis.spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12

    return [
        ("dct orthonormal round-trip", check_dct),
        ("exp-golomb round-trip", check_expgolomb),
        ("metric gradient finite differences", check_gradient),
        ("smoothing determinism", check_smoothing_determinism),
        ("codec honesty", check_codec_honesty),
        ("mid-gray closed-form rate", check_midgray_rate),
        ("bd-rate identity and x2", check_bd_rate),
        ("mds planar recovery", check_mds),
        ("spearman hand value", check_spearman),
    ]


def run_selftest() -> int:
    failed = 0
    for name, fn in _checks():
        try:
            fn()
        except Exception as e:  # noqa: BLE001 - report and continue
            failed += 1
            print(f"FAIL {name}: {type(e).__name__}: {e}")
        else:
            print(f"ok   {name}")
    print(f"selftest: {'PASS' if failed == 0 else 'FAIL'} "
          f"({len(_checks()) - failed}/{len(_checks())})")
    return 0 if failed == 0 else 3
