"""Block-level rate-distortion optimization.

The distortion functional is SSE plus, in ``lnrm`` mode, a linear metric
term <G, xhat - x> built from the (optionally smoothed) gradients of an
ensemble of no-reference metrics weighted by alpha * tau_bar_i.  For each
16x16 macroblock the search exhaustively evaluates partition x delta-QP
candidates and keeps the Lagrangian-cost minimizer; ties break on fewer
bits, then smaller |dQP|, then dQP <= 0 first, then whole16.

Auto weights use the step-based calibration
tau_bar_i = sqrt(n_p / 12) * step / ||g_i||_2, which balances the SSE and
linear-term magnitudes at the quantizer's noise floor and makes the
weighted gradient invariant to rescaling any member metric.  Search costs
live in the codec's 8-bit units (differences scaled by 255) so the step,
the Lagrangian lambda = 0.85 * step^2 and the calibration are mutually
consistent across the QP range.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .blockcodec import (Bitstream, MACROBLOCK, PARTITION_SPLIT4,
                         PARTITION_WHOLE16, PIXEL_SCALE, MacroblockDecision,
                         ZIGZAG, assemble, block_bits_many, center_scale,
                         dct2_many, delta_of_qp, dequantize, effective_qp,
                         idct2_many, quantize, reconstruction_image,
                         se_length, unscale_clip)
from .errors import DegenerateMetricError, ValidationError
from .image import (GradientField, Image, gradient_rgb_to_ycbcr, pad_planes,
                    psnr, rgb_to_ycbcr)
from .metrics import AUTO, MetricEnsembleSpec, member_gradient, metric_id, \
    resolve_metric
from .smoothing import smooth_score

DEFAULT_QP_SWEEP = (25, 28, 31, 34, 37)
SMOOTH_SUFFIX = "@smoothed"


# Lagrangian constant calibrated to this codec's measured D-R slope: the
# classic 0.85 assumes a predictive codec with an efficient entropy coder;
# with prediction-free Exp-Golomb coding it saturates every macroblock at
# the +4 QP offset bound, degenerating the search.  0.10 centers the
# chosen offsets across the sweep range.
LAMBDA_SCALE = 0.10


def lambda_of_qp(qp: int) -> float:
    """High-rate SSE Lagrangian lambda = LAMBDA_SCALE * step(qp)^2."""
    return LAMBDA_SCALE * delta_of_qp(qp) ** 2


def calibrate_tau_hybrid(grads, delta: float, n_p: int) -> list[float]:
    """Step-based base weights sqrt(n_p/12) * delta / ||g_i||_2."""
    scale = np.sqrt(n_p / 12.0) * delta
    out = []
    for g in grads:
        nrm = g.norm() if isinstance(g, GradientField) else float(np.linalg.norm(g))
        if nrm == 0.0:
            raise DegenerateMetricError("degenerate metric at this input")
        out.append(float(scale / nrm))
    return out


def combined_gradient(spec: MetricEnsembleSpec, x: Image, delta: float) -> GradientField:
    """G = sum_i alpha * tau_bar_i * g_i with auto weights calibrated from
    the member gradient norms at step ``delta``; explicit numeric weights
    bypass calibration."""
    scale = np.sqrt(x.n_samples / 12.0) * delta
    acc = np.zeros(x.geometry())
    for member, w in spec.entries:
        g = member_gradient(spec, member, x)
        if w == AUTO:
            nrm = g.norm()
            if nrm == 0.0:
                raise DegenerateMetricError(
                    f"degenerate metric at this input: {metric_id(member)}")
            tau_bar = scale / nrm
        else:
            tau_bar = float(w)
        acc += (spec.alpha * tau_bar) * g.planes
    return GradientField(acc)


def block_cost(x_i: np.ndarray, xhat_i: np.ndarray, bits: int,
               g_i: np.ndarray | None, lam: float) -> float:
    """||x_i - xhat_i||^2 + <G_i, xhat_i - x_i> + lambda * bits."""
    d = np.asarray(xhat_i, dtype=np.float64) - np.asarray(x_i, dtype=np.float64)
    cost = float(np.dot(d.reshape(-1), d.reshape(-1)))
    if g_i is not None:
        cost += float(np.dot(np.asarray(g_i).reshape(-1), d.reshape(-1)))
    return cost + lam * bits


@dataclass(frozen=True)
class RdoConfig:
    mode: str = "sse"  # "sse" | "lnrm"
    ensemble: MetricEnsembleSpec | None = None
    base_qp: int = 31
    lam: object = "auto"  # positive float or "auto" -> lambda_of_qp(base_qp)
    dqp_range: tuple[int, int] = (-4, 4)
    partitions: tuple[int, ...] = (4, 16)

    def __post_init__(self):
        if self.mode not in ("sse", "lnrm"):
            raise ValidationError(f"unknown rdo mode {self.mode!r}")
        if self.mode == "lnrm" and self.ensemble is None:
            raise ValidationError("lnrm mode needs a metric ensemble")
        lo, hi = self.dqp_range
        if lo > hi:
            raise ValidationError(f"bad delta-qp range {self.dqp_range}")
        parts = tuple(sorted(set(self.partitions)))
        if not parts or any(p not in (4, 16) for p in parts):
            raise ValidationError(f"partitions must be a subset of (4, 16), got {self.partitions}")
        object.__setattr__(self, "partitions", parts)
        if self.lam != "auto":
            lam = float(self.lam)
            if not np.isfinite(lam) or lam < 0:
                raise ValidationError(f"lambda must be >= 0 or 'auto', got {self.lam}")

    def resolved_lambda(self) -> float:
        return lambda_of_qp(self.base_qp) if self.lam == "auto" else float(self.lam)


@dataclass
class RdPoint:
    """One operating point of a rate-quality curve."""

    qp: int | None
    bpp: float
    psnr_db: float
    scores: dict = field(default_factory=dict)
    ms: float = 0.0
    # diagnostics, not part of the serialized point schema
    rate_bits: int | None = None
    distortion: float | None = None
    lnrm_term: float | None = None
    lam: float | None = None
    extra: dict = field(default_factory=dict)


RdCurve = list  # list[RdPoint]


def _tile(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    nr, nc = h // MACROBLOCK, w // MACROBLOCK
    return plane.reshape(nr, MACROBLOCK, nc, MACROBLOCK).transpose(0, 2, 1, 3) \
                .reshape(nr * nc, MACROBLOCK, MACROBLOCK)


@dataclass
class _Candidate:
    partition: str
    dqp: int
    cost: np.ndarray
    bits: np.ndarray
    recon: np.ndarray
    levels: np.ndarray  # zigzag rows
    sse: np.ndarray
    lnrm: np.ndarray


def _evaluate_candidates(mbs, gmb, cfg: RdoConfig, lam: float, chroma: bool):
    # mbs holds [0,1] samples; rate, distortion and the linear metric term
    # are all accounted in the codec's 8-bit units (see blockcodec)
    n = mbs.shape[0]
    scaled = center_scale(mbs)
    cands = []
    for part in cfg.partitions[::-1]:  # evaluate 16 first; order is cosmetic
        for dqp in range(cfg.dqp_range[0], cfg.dqp_range[1] + 1):
            delta = delta_of_qp(effective_qp(cfg.base_qp, dqp, chroma))
            head = 1 + se_length(dqp)
            if part == 16:
                levels = quantize(dct2_many(scaled), delta)
                recon = unscale_clip(idct2_many(dequantize(levels, delta)))
                zz = levels.reshape(n, 256)[:, ZIGZAG[16]]
                cbits = block_bits_many(zz)
            else:
                sub = scaled.reshape(n, 4, 4, 4, 4).transpose(0, 1, 3, 2, 4) \
                            .reshape(n * 16, 4, 4)
                levels = quantize(dct2_many(sub), delta)
                rsub = unscale_clip(idct2_many(dequantize(levels, delta)))
                recon = rsub.reshape(n, 4, 4, 4, 4).transpose(0, 1, 3, 2, 4) \
                            .reshape(n, 16, 16)
                zz = levels.reshape(n * 16, 16)[:, ZIGZAG[4]]
                cbits = block_bits_many(zz).reshape(n, 16).sum(axis=1)
                zz = zz.reshape(n, 16, 16)
            diff = (recon - mbs) * PIXEL_SCALE
            sse_v = np.einsum("nij,nij->n", diff, diff)
            if gmb is not None:
                lnrm_v = np.einsum("nij,nij->n", gmb, diff)
            else:
                lnrm_v = np.zeros(n)
            bits_v = head + cbits
            cost = sse_v + lnrm_v + lam * bits_v
            cands.append(_Candidate(
                PARTITION_WHOLE16 if part == 16 else PARTITION_SPLIT4,
                dqp, cost, bits_v, recon, zz, sse_v, lnrm_v))
    return cands


def _search_plane(plane, gplane, cfg: RdoConfig, lam: float, chroma: bool):
    mbs = _tile(plane)
    gmb = _tile(gplane) if gplane is not None else None
    cands = _evaluate_candidates(mbs, gmb, cfg, lam, chroma)
    n = mbs.shape[0]
    abs_dqp = [abs(c.dqp) for c in cands]
    pos_dqp = [1 if c.dqp > 0 else 0 for c in cands]
    is_split = [1 if c.partition == PARTITION_SPLIT4 else 0 for c in cands]
    decisions = []
    sse_sum = 0.0
    lnrm_sum = 0.0
    bits_sum = 0
    for i in range(n):
        best = min(range(len(cands)), key=lambda c: (
            cands[c].cost[i], cands[c].bits[i], abs_dqp[c], pos_dqp[c], is_split[c]))
        cand = cands[best]
        if cand.partition == PARTITION_WHOLE16:
            levels = (cand.levels[i],)
        else:
            levels = tuple(cand.levels[i])
        decisions.append(MacroblockDecision(cand.partition, cand.dqp, levels))
        sse_sum += float(cand.sse[i])
        lnrm_sum += float(cand.lnrm[i])
        bits_sum += int(cand.bits[i])
    return decisions, sse_sum, lnrm_sum, bits_sum


def rdo_encode(x: Image, cfg: RdoConfig) -> tuple[Bitstream, Image, RdPoint]:
    """Exhaustive per-macroblock RD search; returns the decodable stream,
    the reconstruction the decoder will reproduce bit-exactly, and stats."""
    t0 = time.perf_counter()
    lam = cfg.resolved_lambda()
    delta_of_qp(cfg.base_qp)  # range check
    planes = rgb_to_ycbcr(x.planes) if x.channels == 3 else x.planes
    padded = pad_planes(planes)
    gpad = None
    if cfg.mode == "lnrm":
        g = combined_gradient(cfg.ensemble, x, delta_of_qp(cfg.base_qp))
        gp = g.planes
        if x.channels == 3:
            gp = gradient_rgb_to_ycbcr(gp)
        # padded samples replicate real pixels but carry no metric signal
        gpad = np.zeros_like(padded)
        gpad[:, :x.height, :x.width] = gp
    decisions = []
    sse_sum = 0.0
    lnrm_sum = 0.0
    for ch in range(x.channels):
        chroma = x.channels == 3 and ch > 0
        d, s, l, _ = _search_plane(padded[ch], None if gpad is None else gpad[ch],
                                   cfg, lam, chroma)
        decisions.append(d)
        sse_sum += s
        lnrm_sum += l
    bs = assemble(decisions, x.width, x.height, x.channels, cfg.base_qp)
    recon = reconstruction_image(decisions, x.width, x.height, x.channels,
                                 cfg.base_qp)
    ms = (time.perf_counter() - t0) * 1e3
    point = RdPoint(
        qp=cfg.base_qp,
        bpp=bs.bit_length / (x.width * x.height),
        psnr_db=psnr(x, recon),
        scores={},
        ms=ms,
        rate_bits=bs.bit_length,
        distortion=sse_sum + lnrm_sum,
        lnrm_term=lnrm_sum if cfg.mode == "lnrm" else None,
        lam=lam,
    )
    return bs, recon, point


def evaluate_scores(recon: Image, eval_metrics, ensemble: MetricEnsembleSpec | None) -> dict:
    """Raw scores for the listed metrics, plus smoothed variants when the
    ensemble carries a smoothing configuration."""
    scores = {}
    for m in eval_metrics:
        mid = metric_id(m)
        mobj = resolve_metric(m)
        scores[mid] = float(mobj.score(recon))
        if ensemble is not None and ensemble.smoothing is not None:
            scores[mid + SMOOTH_SUFFIX] = float(
                smooth_score(mobj, recon, ensemble.smoothing))
    return scores


def _sweep_point(args):
    x, cfg, qp, eval_metrics = args
    bs, recon, point = rdo_encode(x, replace(cfg, base_qp=qp))
    point.scores = evaluate_scores(recon, eval_metrics, cfg.ensemble)
    return point


def sweep(x: Image, qps, cfg: RdoConfig, eval_metrics=(), jobs: int = 1) -> RdCurve:
    """One RdPoint per QP; auto weights and lambda recalibrate per point
    (the step changes with QP).  Listed metrics are evaluated on the
    cropped reconstruction."""
    qps = list(qps)
    if not qps:
        raise ValidationError("qp list must be non-empty")
    if any(b <= a for a, b in zip(qps, qps[1:])):
        raise ValidationError("qp list must be strictly increasing")
    tasks = [(x, cfg, qp, tuple(eval_metrics)) for qp in qps]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


# ---------------------------------------------------------------------------
# curve serialization (JSON object layer; file I/O lives in report/cli)
# ---------------------------------------------------------------------------

def curve_to_obj(curve: RdCurve) -> list:
    out = []
    for p in curve:
        out.append({
            "qp": p.qp,
            "bpp": p.bpp,
            "psnr_db": p.psnr_db,
            "scores": dict(sorted(p.scores.items())),
            "ms": p.ms,
        })
    return out


def curve_from_obj(obj) -> RdCurve:
    if not isinstance(obj, list):
        raise ValidationError("curve JSON must be an array of points")
    curve = []
    for item in obj:
        try:
            curve.append(RdPoint(
                qp=item["qp"],
                bpp=float(item["bpp"]),
                psnr_db=float(item["psnr_db"]),
                scores={k: float(v) for k, v in item["scores"].items()},
                ms=float(item.get("ms", 0.0)),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"bad curve point {item!r}") from e
    return curve
