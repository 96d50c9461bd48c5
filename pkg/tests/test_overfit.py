import math

import numpy as np
import pytest

from lnrc.corpus import make_image
from lnrc.errors import DegenerateMetricError, ValidationError
from lnrc.image import Image, sse
from lnrc.metrics import MetricEnsembleSpec, resolve_metric
from lnrc.overfit import (LatentPyramid, ObjectiveContext, OverfitConfig,
                          SynthesisPlan, _laplace_bits, calibrate_tau_warmup,
                          coded_target, make_pyramid, objective_grad,
                          quantization_noise, rate_eval, rate_proxy,
                          synthesize, train)
from lnrc.smoothing import SmoothingConfig


def _random_pyramid(seed, c=1, h=8, w=8, scales=4, amp=12.0):
    rng = np.random.default_rng(seed)
    pyr = make_pyramid(c, h, w, scales)
    for g in pyr.grids:
        g += rng.normal(0, amp, g.shape)
    pyr.log_scales[:] = rng.normal(0.5, 0.3, scales)
    return pyr


# ---------------------------------------------------------------- synthesis

def test_synthesize_zero_pyramid():
    pyr = make_pyramid(1, 10, 14, 4)
    assert np.all(synthesize(pyr, geometry=(1, 10, 14)) == 0.0)


def test_synthesize_scale0_identity():
    pyr = make_pyramid(1, 9, 7, 3)
    rng = np.random.default_rng(0)
    pyr.grids[0][:] = rng.standard_normal(pyr.grids[0].shape)
    out = synthesize(pyr, geometry=(1, 9, 7))
    assert np.array_equal(out, pyr.grids[0])


def test_synthesize_linearity():
    plan = SynthesisPlan(1, 11, 13, 4)
    a = _random_pyramid(1, h=11, w=13)
    b = _random_pyramid(2, h=11, w=13)
    combo = LatentPyramid([2.0 * ga + 0.5 * gb for ga, gb in zip(a.grids, b.grids)],
                          np.zeros(4))
    lhs = plan.apply(combo.grids)
    rhs = 2.0 * plan.apply(a.grids) + 0.5 * plan.apply(b.grids)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@pytest.mark.parametrize("s", [0, 1, 2, 3])
def test_upsample_adjoint_dot_test(s):
    plan = SynthesisPlan(1, 12, 10, 4)
    rng = np.random.default_rng(s)
    grid = rng.standard_normal(plan.grid_shapes()[s])
    y = rng.standard_normal((1, 12, 10))
    lhs = float(np.sum(plan.upsample(grid, s) * y))
    rhs = float(np.sum(grid * plan.upsample_adjoint(y, s)))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


# --------------------------------------------------------------- rate proxy

def test_rate_closed_form_zero_latent():
    pyr = make_pyramid(1, 1, 1, 1)  # one latent, b = 1
    noisy = [np.zeros((1, 1, 1))]
    total, grads, d_logb = rate_proxy(pyr, noisy)
    assert total == pytest.approx(-math.log2(1.0 - math.exp(-0.5)), rel=1e-12)
    assert grads[0][0, 0, 0] == pytest.approx(0.0, abs=1e-15)  # symmetry


def test_rate_symmetric_in_sign():
    vals = np.array([0.2, 0.49, 0.5, 1.7, 12.0])
    for b in (0.3, 1.0, 7.0):
        pos, dpos, _ = _laplace_bits(vals, b)
        neg, dneg, _ = _laplace_bits(-vals, b)
        assert np.allclose(pos, neg, rtol=1e-14)
        assert np.allclose(dpos, -dneg, rtol=1e-14)


def test_rate_kernel_matches_reference():
    pyr = _random_pyramid(7, h=16, w=16)
    noisy = [g + u for g, u in zip(pyr.grids, quantization_noise(pyr, 1, 0))]
    total, grads, d_logb = rate_proxy(pyr, noisy)
    ref_total = 0.0
    for s, lt in enumerate(noisy):
        b = math.exp(pyr.log_scales[s])
        bits, d_lt, d_b = _laplace_bits(lt, b)
        ref_total += float(bits.sum())
        assert np.allclose(grads[s], d_lt, rtol=1e-12, atol=1e-15)
        assert d_logb[s] == pytest.approx(float(d_b.sum()) * b, rel=1e-12)
    assert total == pytest.approx(ref_total, rel=1e-12)


def test_rate_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    lt = rng.uniform(-6, 6, size=100)
    lt = lt[np.abs(np.abs(lt) - 0.5) > 1e-3]  # stay off the C1 kinks
    b = 1.3
    bits, d_lt, d_b = _laplace_bits(lt, b)
    h = 1e-6
    fd_lt = (_laplace_bits(lt + h, b)[0] - _laplace_bits(lt - h, b)[0]) / (2 * h)
    assert np.max(np.abs(fd_lt - d_lt) / np.maximum(np.abs(fd_lt), 1e-9)) < 1e-6
    fd_b = (_laplace_bits(lt, b + h)[0] - _laplace_bits(lt, b - h)[0]) / (2 * h)
    assert np.max(np.abs(fd_b - d_b) / np.maximum(np.abs(fd_b), 1e-6)) < 1e-6


def test_rate_eval_non_negative():
    pyr = _random_pyramid(13)
    assert rate_eval(pyr) >= 0.0


# --------------------------------------------------------------- objectives

def _context(objective, plan, img, alpha=0.7, smoothing=None):
    members = [(resolve_metric("tv-charbonnier"), alpha * 2.0),
               (resolve_metric("sharpness"), alpha * 1.5)]
    if objective in ("lnrm", "slnrm"):
        acc = sum(w / 255.0 * m.grad(img).planes for m, w in members)
        return ObjectiveContext(plan, objective, linear_field=acc)
    return ObjectiveContext(plan, objective, members, smoothing=smoothing)


@pytest.mark.parametrize("objective", ["sse", "nrm", "s-nrm", "lnrm", "slnrm"])
def test_objective_gradients_match_finite_differences(objective):
    img = make_image(60, 8, 8)
    plan = SynthesisPlan(1, 8, 8, 4)
    pyr = _random_pyramid(61, h=8, w=8)
    smoothing = SmoothingConfig(sigma=0.01, samples=3, seed=5)
    ctx = _context(objective, plan, img, smoothing=smoothing)
    cfg = OverfitConfig(lam=0.001, iterations=10, warmup=5, seed=7)
    it = 4
    _, _, _, g_grids, g_logb = objective_grad(pyr, img, cfg, it, ctx)

    def loss_of(p):
        return objective_grad(p, img, cfg, it, ctx)[0]

    rng = np.random.default_rng(62)
    h = 1e-5
    for s in range(4):
        flat_idx = rng.choice(pyr.grids[s].size, size=min(6, pyr.grids[s].size),
                              replace=False)
        for idx in flat_idx:
            p = pyr.copy()
            p.grids[s].reshape(-1)[idx] += h
            up = loss_of(p)
            p.grids[s].reshape(-1)[idx] -= 2 * h
            dn = loss_of(p)
            fd = (up - dn) / (2 * h)
            an = g_grids[s].reshape(-1)[idx]
            assert abs(fd - an) < 1e-5 * max(abs(fd), abs(an), 1e-6)
    for s in range(4):
        p = pyr.copy()
        p.log_scales[s] += h
        up = loss_of(p)
        p.log_scales[s] -= 2 * h
        dn = loss_of(p)
        fd = (up - dn) / (2 * h)
        assert abs(fd - g_logb[s]) < 1e-5 * max(abs(fd), 1e-6)


def test_lnrm_zero_field_equals_sse():
    img = make_image(63, 8, 8)
    plan = SynthesisPlan(1, 8, 8, 4)
    pyr = _random_pyramid(64, h=8, w=8)
    cfg = OverfitConfig(lam=0.001, iterations=10, warmup=5, seed=1)
    sse_ctx = ObjectiveContext(plan, "sse")
    lnrm_ctx = ObjectiveContext(plan, "lnrm", linear_field=np.zeros((1, 8, 8)))
    a = objective_grad(pyr, img, cfg, 2, sse_ctx)
    b = objective_grad(pyr, img, cfg, 2, lnrm_ctx)
    assert a[0] == b[0] and a[1] == b[1]
    for ga, gb in zip(a[3], b[3]):
        assert np.array_equal(ga, gb)


def test_perfect_reconstruction_zero_distortion():
    img = make_image(65, 8, 8)
    plan = SynthesisPlan(1, 8, 8, 4)
    pyr = make_pyramid(1, 8, 8, 4)
    pyr.grids[0][:] = coded_target(img)
    xhat = plan.apply(pyr.grids)
    assert np.array_equal(xhat, coded_target(img))
    assert float(np.sum((xhat - coded_target(img)) ** 2)) == 0.0


# -------------------------------------------------------------- calibration

def test_warmup_calibration_arithmetic():
    x = Image(np.zeros((1, 10, 10)))
    xw = Image(np.full((1, 10, 10), 1.0))  # sse = 100
    assert calibrate_tau_warmup(x, xw, [0.5]) == [pytest.approx(200.0, rel=1e-12)]
    assert calibrate_tau_warmup(x, x, [0.5]) == [0.0]
    # negative scores calibrate by magnitude, weights stay positive
    assert calibrate_tau_warmup(x, xw, [-0.5]) == [pytest.approx(200.0, rel=1e-12)]


def test_warmup_calibration_degenerate_score():
    x = Image(np.zeros((1, 4, 4)))
    xw = Image(np.ones((1, 4, 4)))
    with pytest.raises(DegenerateMetricError):
        calibrate_tau_warmup(x, xw, [1e-13])


# ----------------------------------------------------------------- training

def _ens(alpha=0.3, smoothing=None, metrics=("tv-charbonnier",)):
    return MetricEnsembleSpec(tuple((m, "auto") for m in metrics),
                              alpha=alpha, smoothing=smoothing)


def test_train_counters_exact():
    img = make_image(70, 16, 16)
    smoothing = SmoothingConfig(sigma=0.01, samples=5, seed=4)
    for n_i in (300, 600):
        n_w = 100
        base = dict(lam=0.001, iterations=n_i, warmup=n_w, seed=2)
        r = train(img, OverfitConfig(**base))
        assert r.counters == {"score_evals": 0, "grad_evals": 0}
        r = train(img, OverfitConfig(objective="lnrm", ensemble=_ens(), **base))
        assert r.counters == {"score_evals": 1, "grad_evals": 1}
        r = train(img, OverfitConfig(objective="slnrm",
                                     ensemble=_ens(smoothing=smoothing), **base))
        assert r.counters == {"score_evals": 5, "grad_evals": 5}
        r = train(img, OverfitConfig(objective="nrm", ensemble=_ens(), **base))
        assert r.counters == {"score_evals": (n_i - n_w) + 1,
                              "grad_evals": n_i - n_w}
        r = train(img, OverfitConfig(objective="s-nrm",
                                     ensemble=_ens(smoothing=smoothing), **base))
        assert r.counters == {"score_evals": 5 * (n_i - n_w) + 5,
                              "grad_evals": 5 * (n_i - n_w)}


def test_train_counters_two_members():
    img = make_image(71, 16, 16)
    ens = _ens(metrics=("tv-charbonnier", "blockiness"))
    r = train(img, OverfitConfig(lam=0.001, iterations=300, warmup=100,
                                 objective="lnrm", ensemble=ens, seed=2))
    assert r.counters == {"score_evals": 2, "grad_evals": 2}


def test_train_deterministic():
    img = make_image(72, 16, 16)
    cfg = OverfitConfig(lam=0.001, iterations=400, warmup=100, seed=9)
    a = train(img, cfg)
    b = train(img, cfg)
    assert np.array_equal(a.reconstruction.planes, b.reconstruction.planes)
    assert a.rate_bits == b.rate_bits
    assert a.scores == b.scores
    assert np.array_equal(a.loss_history, b.loss_history)


def test_train_losses_improve_and_golden(goldens):
    img = make_image(7, 32, 32)
    r = train(img, OverfitConfig(lam=0.001, iterations=2000, warmup=200, seed=3))
    assert r.loss_history[-1] <= r.loss_history[199]
    g = goldens["overfit_sse_32"]
    assert r.psnr_db == pytest.approx(g["psnr_db"], rel=1e-9)
    assert r.bpp == pytest.approx(g["bpp"], rel=1e-9)
    assert r.loss_history[-1] == pytest.approx(g["loss_final"], rel=1e-9)


def test_rounded_rate_envelope():
    for seed in (7, 8):
        img = make_image(seed, 32, 32)
        r = train(img, OverfitConfig(lam=0.001, iterations=1200, warmup=200,
                                     seed=3))
        assert r.rate_bits >= 0.0
        ratio = r.rate_bits / r.train_rate_bits
        assert 0.5 <= ratio <= 2.0


def test_train_tau_bar_reported():
    img = make_image(73, 16, 16)
    r = train(img, OverfitConfig(lam=0.001, iterations=300, warmup=100,
                                 objective="lnrm", ensemble=_ens(), seed=2))
    assert set(r.tau_bar) == {"tv-charbonnier"}
    assert r.tau_bar["tv-charbonnier"] > 0


def test_config_validation():
    with pytest.raises(ValidationError):
        OverfitConfig(lam=0.0)
    with pytest.raises(ValidationError):
        OverfitConfig(lam=0.001, iterations=100, warmup=100)
    with pytest.raises(ValidationError):
        OverfitConfig(lam=0.001, objective="nrm")  # no ensemble
    with pytest.raises(ValidationError):
        OverfitConfig(lam=0.001, objective="slnrm", ensemble=_ens())  # no smoothing
    with pytest.raises(ValidationError):
        OverfitConfig(lam=0.001, objective="mse")


def test_result_serialization():
    img = make_image(74, 16, 16)
    r = train(img, OverfitConfig(lam=0.001, iterations=300, warmup=100, seed=2))
    obj = r.to_obj()
    assert set(obj) >= {"bpp", "psnr_db", "scores", "counters",
                        "ms_warmup", "ms_main"}
    assert obj["counters"] == {"score_evals": 0, "grad_evals": 0}
