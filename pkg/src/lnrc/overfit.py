"""Minimal overfitted codec: a latent pyramid with fixed bilinear synthesis
and a Laplace rate proxy, trained per image by Adam.

Synthesis is linear (sum of upsampled latent grids), so every gradient is
hand-derived and exact; no autodiff engine is involved.  Training follows
the usual overfitted-codec recipe: additive uniform noise stands in for
quantization during optimization (on both the synthesis and rate paths),
hard rounding is used for the final evaluation, and the reported rate is
the ideal Laplace codelength of the rounded latents.

The rate model codes unit-step symbols, so latents must carry the image
at an amplitude well above 1: training fits the zero-centered 8-bit
target (x - 0.5) * 255 (the same codec-internal units the hybrid path
uses), which makes hard rounding a 1/255-granularity quantizer.  Metrics
always see [0, 1]-domain reconstructions; the chain rule through the
/255 rescale is folded into the metric-term gradients.  The user-facing
lambda keeps the conventional per-pixel "MSE + lambda * bpp" semantics
and is rescaled internally.

Five objectives are supported: plain SSE, direct metric optimization
(``nrm``), its smoothed variant (``s-nrm``), and the linearized variants
(``lnrm`` / ``slnrm``) whose gradient field is computed once before the
main phase.  Auto metric weights come from the warm-up calibration
tau_bar_i = ||x - xhat_w||^2 / |b_i(xhat_w)| (both in coded units), where
xhat_w is the reconstruction at the end of the SSE warm-up phase.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .blockcodec import PIXEL_SCALE
from .errors import DegenerateMetricError, ValidationError
from .image import GradientField, Image, psnr, sse
from .metrics import AUTO, MetricEnsembleSpec, metric_id, resolve_metric
from .smoothing import smooth_evaluate, smooth_grad, smooth_score

OBJECTIVES = ("sse", "nrm", "s-nrm", "lnrm", "slnrm")
_LN2 = math.log(2.0)
# scale floor 0.05 keeps exp(-|l|/b) in normal float range (subnormals cost
# 10-100x on x86) and is rate-indistinguishable from a degenerate delta
_LOG_B_MIN, _LOG_B_MAX = math.log(0.05), math.log(1e3)


def coded_target(x: Image) -> np.ndarray:
    """The training target in codec units: (x - 0.5) * 255."""
    return (x.planes - 0.5) * PIXEL_SCALE


def coded_to_image(field: np.ndarray, clamp: bool = True) -> Image:
    planes = field / PIXEL_SCALE + 0.5
    return Image(np.clip(planes, 0.0, 1.0) if clamp else planes)


@dataclass
class OverfitConfig:
    lam: float
    iterations: int = 2000
    warmup: int = 200
    objective: str = "sse"
    ensemble: MetricEnsembleSpec | None = None
    scales: int = 4
    lr: float = 0.01
    lr_end: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_metrics: tuple = ()

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective {self.objective!r}")
        if not (0 < self.warmup < self.iterations):
            raise ValidationError("need 0 < warmup < iterations")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValidationError(f"lambda must be > 0, got {self.lam}")
        if self.objective != "sse" and self.ensemble is None:
            raise ValidationError(f"objective {self.objective} needs an ensemble")
        if self.objective in ("s-nrm", "slnrm") and (
                self.ensemble is None or self.ensemble.smoothing is None):
            raise ValidationError(f"objective {self.objective} needs ensemble smoothing")
        if self.scales < 1:
            raise ValidationError("need at least one pyramid scale")


@dataclass
class LatentPyramid:
    """Latent grids per scale (each (channels, ceil(h/2^s), ceil(w/2^s)))
    plus one log Laplace scale per grid."""

    grids: list
    log_scales: np.ndarray

    @property
    def n_latents(self) -> int:
        return sum(g.size for g in self.grids)

    def copy(self) -> "LatentPyramid":
        return LatentPyramid([g.copy() for g in self.grids], self.log_scales.copy())


def make_pyramid(channels: int, height: int, width: int, scales: int = 4) -> LatentPyramid:
    grids = []
    for s in range(scales):
        hs = -(-height // (1 << s))
        ws = -(-width // (1 << s))
        grids.append(np.zeros((channels, hs, ws)))
    return LatentPyramid(grids, np.zeros(scales))


# ---------------------------------------------------------------------------
# bilinear synthesis and its adjoint
# ---------------------------------------------------------------------------

def _axis_matrix(n_out: int, n_in: int, factor: int) -> np.ndarray:
    # output sample p draws from source (p + 0.5)/factor - 0.5, edge-clamped;
    # bilinear weights as a dense (n_out, n_in) interpolation matrix
    pos = (np.arange(n_out) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = pos - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w)
    np.add.at(m, (np.arange(n_out), i1), w)
    return m


class SynthesisPlan:
    """Precomputed separable interpolation for x_hat = sum_s U_s(L_s).

    Bilinear upsampling factors as U_s(L) = R_s L C_s^T, so synthesis and
    its exact adjoint are small dense matmuls; scale 0 is the identity.
    """

    def __init__(self, channels: int, height: int, width: int, scales: int):
        self.channels = channels
        self.height = height
        self.width = width
        self.scales = scales
        self._r = []
        self._ct = []
        self._grid_shapes = []
        for s in range(scales):
            hs = -(-height // (1 << s))
            ws = -(-width // (1 << s))
            self._grid_shapes.append((channels, hs, ws))
            self._r.append(_axis_matrix(height, hs, 1 << s))
            self._ct.append(_axis_matrix(width, ws, 1 << s).T.copy())

    def grid_shapes(self):
        return list(self._grid_shapes)

    def upsample(self, grid: np.ndarray, s: int) -> np.ndarray:
        if s == 0:
            return grid.copy()
        return self._r[s] @ grid @ self._ct[s]

    def upsample_adjoint(self, y: np.ndarray, s: int) -> np.ndarray:
        if s == 0:
            return y.copy()
        return self._r[s].T @ y @ self._ct[s].T

    def apply(self, grids) -> np.ndarray:
        acc = grids[0].copy()
        for s in range(1, self.scales):
            acc += self._r[s] @ grids[s] @ self._ct[s]
        return acc

    def adjoint(self, y: np.ndarray) -> list:
        return [self.upsample_adjoint(y, s) for s in range(self.scales)]


def synthesize(pyr: LatentPyramid, plan: SynthesisPlan | None = None,
               geometry: tuple | None = None) -> np.ndarray:
    """x_hat = sum_s U_s(L_s); unclamped (training domain)."""
    if plan is None:
        if geometry is None:
            raise ValidationError("synthesize needs a plan or target geometry")
        c, h, w = geometry
        plan = SynthesisPlan(c, h, w, len(pyr.grids))
    return plan.apply(pyr.grids)


# ---------------------------------------------------------------------------
# Laplace rate proxy
# ---------------------------------------------------------------------------

def _laplace_bits(lt: np.ndarray, b, aux=None):
    """Codelength -log2(F(lt+.5) - F(lt-.5)) for Laplace(0, b), with
    closed-form derivatives wrt lt and b.

    Branch-free over three regions (left tail, unit bin straddling zero,
    right tail); all exponentials carry non-positive arguments so the
    tails stay stable.  ``b`` broadcasts against lt; ``aux`` may carry
    precomputed (q, log_half_tail, tail_b) arrays for the hot path.
    """
    lt = np.asarray(lt, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)  # scalar or lt-shaped; ufuncs broadcast
    if aux is None:
        q = np.exp(-1.0 / b)
        log_half_tail = np.log(0.5) + np.log1p(-q)
        tail_b = q / (b * b * (1.0 - q))
    else:
        q, log_half_tail, tail_b = aux
    a = lt - 0.5
    c = lt + 0.5
    # e^{-|a|/b}, e^{-|c|/b}: equal the signed-exponent terms inside the bin.
    # Arguments are floored at -690 (exp stays a normal float, SIMD fast
    # path); the floor can only bind in tail lanes, which never read ea/ec.
    ea = np.exp(np.maximum(-np.abs(a) / b, -690.0))
    ec = np.exp(np.maximum(-np.abs(c) / b, -690.0))
    mid = (a < 0) & (c > 0)
    near = np.where(a >= 0, a, -c)  # distance of the bin's near edge to 0
    p_mid = 1.0 - 0.5 * (ec + ea)
    p_safe = np.where(mid, p_mid, 1.0)
    bits = np.where(mid, -np.log(p_safe) / _LN2, (near / b - log_half_tail) / _LN2)
    tail_dlt = (1.0 / b) / _LN2
    d_lt = np.where(mid, -(ec - ea) / (2.0 * b * p_safe * _LN2),
                    np.where(a >= 0, tail_dlt, -tail_dlt))
    d_b = np.where(mid, -(-c * ec + a * ea) / (2.0 * b * b * p_safe * _LN2),
                   -(near / (b * b) - tail_b) / _LN2)
    return bits, d_lt, d_b


@numba.njit(cache=True)
def _rate_kernel(flat, offsets, b_s, lht_s, tailb_s, d_lt, db_sums):
    """Fused single-pass codelength + gradients; the training hot loop.

    Same piecewise math as _laplace_bits, written per element: inside the
    zero-straddling bin P = 1 - e^{-0.5/b} cosh(l/b), in the tails
    log P = log(0.5) + log1p(-e^{-1/b}) - (|l| - 0.5)/b.
    """
    inv_ln2 = 1.0 / _LN2
    total = 0.0
    for s in range(b_s.shape[0]):
        b = b_s[s]
        inv_b = 1.0 / b
        k = math.exp(-0.5 * inv_b)
        lht = lht_s[s]
        tb = tailb_s[s]
        tail_dlt = inv_b * inv_ln2
        db_sum = 0.0
        for i in range(offsets[s], offsets[s + 1]):
            l = flat[i]
            u = abs(l)
            if u >= 0.5:
                near = u - 0.5
                total += (near * inv_b - lht) * inv_ln2
                d_lt[i] = tail_dlt if l >= 0 else -tail_dlt
                db_sum += -(near * inv_b * inv_b - tb) * inv_ln2
            else:
                eu = math.exp(u * inv_b)
                ieu = 1.0 / eu
                cosh_u = 0.5 * (eu + ieu)
                sinh_u = 0.5 * (eu - ieu)
                p = 1.0 - k * cosh_u
                total += -math.log(p) * inv_ln2
                mag = k * sinh_u * inv_b / (p * _LN2)
                d_lt[i] = mag if l >= 0 else -mag
                db_sum += k * (0.5 * cosh_u - u * sinh_u) * inv_b * inv_b \
                    / (p * _LN2)
        db_sums[s] = db_sum
    return total


def rate_proxy(pyr: LatentPyramid, noisy_grids) -> tuple[float, list, np.ndarray]:
    """Total proxy rate in bits over noisy latents, with gradients wrt the
    latents and wrt each grid's log scale."""
    sizes = [g.size for g in pyr.grids]
    offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
    flat = np.ascontiguousarray(
        np.concatenate([g.reshape(-1) for g in noisy_grids]))
    b_scale = np.exp(pyr.log_scales)
    q_s = np.exp(-1.0 / b_scale)
    lht_s = np.log(0.5) + np.log1p(-q_s)
    tailb_s = q_s / (b_scale * b_scale * (1.0 - q_s))
    d_lt = np.empty(flat.shape[0])
    db_sums = np.empty(b_scale.shape[0])
    total = _rate_kernel(flat, offsets, b_scale, lht_s, tailb_s, d_lt, db_sums)
    grads = [d_lt[offsets[s]:offsets[s + 1]].reshape(g.shape)
             for s, g in enumerate(pyr.grids)]
    d_logb = db_sums * b_scale  # chain through exp
    return float(total), grads, d_logb


def _round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def rate_eval(pyr: LatentPyramid) -> float:
    """Ideal codelength of the hard-rounded latents, no noise."""
    total = 0.0
    for s, g in enumerate(pyr.grids):
        b = math.exp(pyr.log_scales[s])
        bits, _, _ = _laplace_bits(_round_half_away(g), b)
        total += float(bits.sum())
    return total


def quantization_noise(pyr: LatentPyramid, seed: int, iteration: int) -> list:
    """Uniform(-0.5, 0.5) noise per latent, filled in ascending scale order.

    Drawn from a counter-based Philox stream keyed (seed, iteration), so
    every iteration's realization is reproducible in O(1) without
    advancing shared state.
    """
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, iteration], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(counter=0, key=key))
    u = gen.random(pyr.n_latents) - 0.5
    out = []
    pos = 0
    for g in pyr.grids:
        out.append(u[pos:pos + g.size].reshape(g.shape))
        pos += g.size
    return out


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

class _CountingMetric:
    """Wrap a metric so every underlying score/grad evaluation is tallied."""

    def __init__(self, inner, counters: dict):
        self.inner = inner
        self.name = inner.name
        self.counters = counters

    def score(self, img: Image) -> float:
        self.counters["score_evals"] += 1
        return self.inner.score(img)

    def grad(self, img: Image) -> GradientField:
        self.counters["grad_evals"] += 1
        return self.inner.grad(img)


@dataclass
class ObjectiveContext:
    """Resolved state shared by all iterations of one training phase."""

    plan: SynthesisPlan
    objective: str
    members: list = field(default_factory=list)  # (metric, effective weight)
    linear_field: np.ndarray | None = None       # G for lnrm/slnrm
    smoothing: object = None

    def sse_context(self) -> "ObjectiveContext":
        return ObjectiveContext(self.plan, "sse")


def objective_grad(pyr: LatentPyramid, x: Image, cfg: OverfitConfig,
                   iteration: int, ctx: ObjectiveContext):
    """Loss and exact gradients for one iteration's noise realization.

    Returns (loss, distortion, rate_bits, grid gradients, log-scale
    gradients).  Deterministic in (pyr, x, cfg, iteration).
    """
    noise = quantization_noise(pyr, cfg.seed, iteration)
    noisy = [g + u for g, u in zip(pyr.grids, noise)]
    xhat = ctx.plan.apply(noisy)
    diff = xhat - coded_target(x)
    dist = float(np.dot(diff.reshape(-1), diff.reshape(-1)))
    d_xhat = 2.0 * diff

    obj = ctx.objective
    if obj in ("nrm", "s-nrm"):
        xhat_img = coded_to_image(xhat, clamp=False)
        for metric, w in ctx.members:
            if obj == "nrm":
                dist += w * metric.score(xhat_img)
                d_xhat += (w / PIXEL_SCALE) * metric.grad(xhat_img).planes
            else:
                s, g = smooth_evaluate(metric, xhat_img, ctx.smoothing,
                                       index_offset=iteration * ctx.smoothing.samples)
                dist += w * s
                d_xhat += (w / PIXEL_SCALE) * g.planes
    elif obj in ("lnrm", "slnrm"):
        dist += float(np.dot(ctx.linear_field.reshape(-1), diff.reshape(-1)))
        d_xhat = d_xhat + ctx.linear_field
    elif obj != "sse":
        raise ValidationError(f"unknown objective {obj!r}")

    lam = cfg.lam * PIXEL_SCALE ** 2  # per-pixel mse/bpp trade in coded units
    rate_bits, d_rate, d_logb = rate_proxy(pyr, noisy)
    grid_grads = ctx.plan.adjoint(d_xhat)
    for s in range(len(grid_grads)):
        grid_grads[s] += lam * d_rate[s]
    loss = dist + lam * rate_bits
    return loss, dist, rate_bits, grid_grads, lam * d_logb


def calibrate_tau_warmup(x: Image, xhat_w: Image, scores) -> list[float]:
    """Warm-up weights ||x - xhat_w||^2 / |b_i(xhat_w)|.

    The absolute value keeps weights positive under the loss convention
    for metrics whose scores can be negative (e.g. sharpness).
    """
    e = sse(x, xhat_w)
    out = []
    for s in scores:
        if abs(s) < 1e-12:
            raise DegenerateMetricError(
                f"warm-up score {s!r} too small to calibrate against")
        out.append(e / abs(s))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class OverfitResult:
    reconstruction: Image
    rate_bits: float
    bpp: float
    psnr_db: float
    scores: dict
    counters: dict
    ms_warmup: float
    ms_main: float
    lam: float
    objective: str
    loss_history: np.ndarray
    train_rate_bits: float
    tau_bar: dict

    def to_obj(self) -> dict:
        return {
            "bpp": self.bpp,
            "psnr_db": self.psnr_db,
            "scores": dict(sorted(self.scores.items())),
            "counters": dict(self.counters),
            "ms_warmup": self.ms_warmup,
            "ms_main": self.ms_main,
            "lambda": self.lam,
            "objective": self.objective,
        }


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(p.shape[0]):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


class _Adam:
    """Adam with a geometric step-size decay.  The configured step sizes
    are in each parameter's natural units: latents move in coded pixel
    units (so their step scales by 255), log scales in log units."""

    def __init__(self, shapes, scales, cfg: OverfitConfig, total_steps: int):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.scales = scales
        self.cfg = cfg
        self.total = total_steps
        self.t = 0

    def lr(self) -> float:
        c = self.cfg
        if self.total <= 1:
            return c.lr
        frac = self.t / (self.total - 1)
        return c.lr * (c.lr_end / c.lr) ** frac

    def step(self, params, grads):
        c = self.cfg
        lr = self.lr()
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            _adam_kernel(p.reshape(-1), np.ascontiguousarray(g.reshape(-1)),
                         self.m[i].reshape(-1), self.v[i].reshape(-1),
                         lr * self.scales[i], c.beta1, c.beta2, c.eps, bc1, bc2)


def _resolve_members(cfg: OverfitConfig, x: Image, xw_coded: np.ndarray,
                     counters: dict):
    """Warm-up calibration: returns [(counting metric, alpha * tau_bar)]
    and the resolved base weights keyed by metric id.  The SSE numerator
    lives in coded units; scores are taken on the [0,1]-domain warm-up
    reconstruction (smoothed for the smoothed objectives)."""
    spec = cfg.ensemble
    smoothed = cfg.objective in ("s-nrm", "slnrm")
    x_coded_img = Image(coded_target(x))
    xw_coded_img = Image(xw_coded)
    xw_img = coded_to_image(xw_coded, clamp=False)
    members = []
    taus = {}
    for metric, w in spec.entries:
        m = _CountingMetric(resolve_metric(metric), counters)
        if w == AUTO:
            if smoothed:
                s = smooth_score(m, xw_img, spec.smoothing)
            else:
                s = m.score(xw_img)
            tau = calibrate_tau_warmup(x_coded_img, xw_coded_img, [s])[0]
        else:
            tau = float(w)
        taus[metric_id(metric)] = tau
        members.append((m, spec.alpha * tau))
    return members, taus


def train(x: Image, cfg: OverfitConfig) -> OverfitResult:
    """Warm-up on SSE, calibrate, then optimize the configured objective.

    Counters tally every underlying metric score/grad evaluation incurred
    by encoding (calibration and training phases); final reporting
    metrics are not billed.  Bit-identical for identical (x, cfg) apart
    from wall times.
    """
    plan = SynthesisPlan(x.channels, x.height, x.width, cfg.scales)
    proto = make_pyramid(x.channels, x.height, x.width, cfg.scales)
    # one flat backing buffer; the pyramid grids are views into it, so the
    # optimizer touches two tensors per step
    flat = np.zeros(proto.n_latents)
    offsets = np.concatenate(([0], np.cumsum([g.size for g in proto.grids])))
    pyr = LatentPyramid(
        [flat[offsets[s]:offsets[s + 1]].reshape(g.shape)
         for s, g in enumerate(proto.grids)],
        np.zeros(cfg.scales))
    params = [flat, pyr.log_scales]
    adam = _Adam([p.shape for p in params], [PIXEL_SCALE, 1.0], cfg,
                 cfg.iterations)
    counters = {"score_evals": 0, "grad_evals": 0}
    loss_history = np.zeros(cfg.iterations)
    sse_ctx = ObjectiveContext(plan, "sse")

    def step(it, ctx):
        loss, _, _, g_grids, g_logb = objective_grad(pyr, x, cfg, it, ctx)
        g_flat = np.concatenate([g.reshape(-1) for g in g_grids])
        adam.step(params, [g_flat, g_logb])
        np.clip(pyr.log_scales, _LOG_B_MIN, _LOG_B_MAX, out=pyr.log_scales)
        loss_history[it] = loss

    t0 = time.perf_counter()
    for it in range(cfg.warmup):
        step(it, sse_ctx)
    ms_warmup = (time.perf_counter() - t0) * 1e3

    taus = {}
    if cfg.objective == "sse":
        ctx = sse_ctx
    else:
        xw_coded = plan.apply(pyr.grids)
        members, taus = _resolve_members(cfg, x, xw_coded, counters)
        ctx = ObjectiveContext(plan, cfg.objective, members,
                               smoothing=cfg.ensemble.smoothing)
        if cfg.objective in ("lnrm", "slnrm"):
            # gradients taken at the input, in coded units (chain through /255)
            acc = np.zeros(x.geometry())
            for m, w in members:
                if cfg.objective == "slnrm":
                    g = smooth_grad(m, x, cfg.ensemble.smoothing)
                else:
                    g = m.grad(x)
                acc += (w / PIXEL_SCALE) * g.planes
            ctx = ObjectiveContext(plan, cfg.objective, linear_field=acc)

    t0 = time.perf_counter()
    for it in range(cfg.warmup, cfg.iterations):
        step(it, ctx)
    ms_main = (time.perf_counter() - t0) * 1e3

    # final evaluation on hard-rounded latents, no noise
    rounded = LatentPyramid([_round_half_away(g) for g in pyr.grids],
                            pyr.log_scales.copy())
    recon = coded_to_image(plan.apply(rounded.grids))
    rate_bits = rate_eval(rounded)
    _, _, last_rate, _, _ = objective_grad(pyr, x, cfg, cfg.iterations - 1, sse_ctx)
    scores = {}
    eval_ids = list(cfg.eval_metrics) or (
        cfg.ensemble.member_ids() if cfg.ensemble is not None else [])
    for mid in eval_ids:
        m = resolve_metric(mid)
        scores[metric_id(mid)] = float(m.score(recon))
        if cfg.ensemble is not None and cfg.ensemble.smoothing is not None:
            scores[metric_id(mid) + "@smoothed"] = float(
                smooth_score(m, recon, cfg.ensemble.smoothing))

    return OverfitResult(
        reconstruction=recon,
        rate_bits=rate_bits,
        bpp=rate_bits / (x.width * x.height),
        psnr_db=psnr(x, recon),
        scores=scores,
        counters=counters,
        ms_warmup=ms_warmup,
        ms_main=ms_main,
        lam=cfg.lam,
        objective=cfg.objective,
        loss_history=loss_history,
        train_rate_bits=last_rate,
        tau_bar=taus,
    )
