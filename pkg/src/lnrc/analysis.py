"""Evaluation mathematics: rank correlation, metric-space embedding and
clustering for ensemble composition, and Bjontegaard rate differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonOverlappingCurvesError, ValidationError

BD_MIN_POINTS = 4
_SIMPSON_INTERVALS = 200


# ---------------------------------------------------------------------------
# rank correlation
# ---------------------------------------------------------------------------

def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    ranks[order] = np.arange(1, len(v) + 1, dtype=np.float64)
    _, inv = np.unique(v, return_inverse=True)
    sums = np.bincount(inv, weights=ranks)
    counts = np.bincount(inv)
    return (sums / counts)[inv]


def spearman(a, b) -> float:
    """Spearman rank correlation: Pearson correlation of average-tied ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("spearman needs two equal-length vectors")
    if len(a) < 3:
        raise ValidationError("spearman needs at least 3 observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValidationError("undefined correlation: constant score vector")
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.dot(ra, rb) / np.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))


@dataclass(frozen=True)
class ScoreTable:
    """Scores of reconstructions (rows) under several metrics (columns)."""

    row_ids: tuple
    metric_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.row_ids), len(self.metric_ids)):
            raise ValidationError("score table shape does not match labels")
        if not np.all(np.isfinite(v)):
            raise ValidationError("score table has missing/non-finite entries")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "metric_ids", tuple(self.metric_ids))


def spearman_matrix(table: ScoreTable) -> np.ndarray:
    if len(table.row_ids) < 3:
        raise ValidationError("correlation needs at least 3 rows")
    m = len(table.metric_ids)
    rho = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            r = spearman(table.values[:, i], table.values[:, j])
            rho[i, j] = rho[j, i] = r
    return rho


def dissimilarity(rho: np.ndarray) -> np.ndarray:
    """d_ij = 1 - |rho_ij|: anti-correlated metrics are informationally close."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError("correlation matrix must be square")
    if not np.allclose(rho, rho.T, atol=1e-12) or \
            not np.allclose(np.diag(rho), 1.0, atol=1e-12):
        raise ValidationError("correlation matrix must be symmetric with unit diagonal")
    d = 1.0 - np.abs(rho)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


# ---------------------------------------------------------------------------
# classical MDS by cyclic Jacobi rotations
# ---------------------------------------------------------------------------

@dataclass
class MdsEmbedding:
    coords: np.ndarray       # (n, 2)
    eigenvalues: np.ndarray  # all n, descending
    degenerate: bool
    labels: np.ndarray | None = None


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Sweeps stop when the off-diagonal Frobenius mass falls below
    tol * max(1, ||A||_F).  Returns eigenvalues (descending) and the
    matching eigenvector columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    frob = max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a * a) - np.sum(np.diag(a) ** 2))
        if off <= tol * frob:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta)) \
                    if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def mds_embed(d: np.ndarray, dim: int = 2) -> MdsEmbedding:
    """Classical MDS: double-center -0.5 * J d^2 J and take the top
    non-negative eigenpairs.  Axis signs are fixed by making the
    largest-magnitude coordinate positive per axis."""
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ValidationError("dissimilarity matrix must be square")
    if not np.allclose(d, d.T, atol=1e-12) or np.abs(np.diag(d)).max() > 1e-12:
        raise ValidationError("dissimilarity matrix must be symmetric with zero diagonal")
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ (d * d) @ j
    b = 0.5 * (b + b.T)
    evals, evecs = jacobi_eigh(b)
    degenerate = int(np.sum(evals >= -1e-9)) < dim
    coords = np.zeros((n, dim))
    for k in range(dim):
        lam = evals[k] if k < n else 0.0
        if lam > 0.0:
            axis = evecs[:, k] * np.sqrt(lam)
            imax = int(np.argmax(np.abs(axis)))
            if axis[imax] < 0:
                axis = -axis
            coords[:, k] = axis
    return MdsEmbedding(coords=coords, eigenvalues=evals, degenerate=degenerate)


def cluster(d_or_embedding, threshold: float) -> np.ndarray:
    """Single-linkage clustering: connected components of pairs with
    distance strictly below the threshold.  Labels are numbered by first
    appearance in row order."""
    if threshold <= 0:
        raise ValidationError("link threshold must be > 0")
    if isinstance(d_or_embedding, MdsEmbedding):
        pts = d_or_embedding.coords
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=2))
    else:
        d = np.asarray(d_or_embedding, dtype=np.float64)
    n = d.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] < threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    labels = np.empty(n, dtype=np.int64)
    mapping = {}
    for i in range(n):
        r = find(i)
        if r not in mapping:
            mapping[r] = len(mapping)
        labels[i] = mapping[r]
    return labels


# ---------------------------------------------------------------------------
# Bjontegaard rate difference
# ---------------------------------------------------------------------------

class _CubicFit:
    """Cubic least squares of log10(rate) against quality, with the
    quality axis affinely rescaled to [0, 1] for conditioning.  With
    exactly 4 points the fit interpolates."""

    def __init__(self, quality: np.ndarray, log_rate: np.ndarray):
        self.qlo = float(quality.min())
        self.qhi = float(quality.max())
        t = (quality - self.qlo) / (self.qhi - self.qlo)
        a = np.vander(t, 4, increasing=True)
        self.coeffs = np.linalg.solve(a.T @ a, a.T @ log_rate)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        t = (np.asarray(q, dtype=np.float64) - self.qlo) / (self.qhi - self.qlo)
        return ((self.coeffs[3] * t + self.coeffs[2]) * t + self.coeffs[1]) * t \
            + self.coeffs[0]


def _curve_rq(curve, metric: str):
    rates = []
    quals = []
    for p in curve:
        rates.append(p.bpp)
        if metric == "psnr":
            quals.append(p.psnr_db)
        else:
            if metric not in p.scores:
                raise ValidationError(f"curve point lacks metric {metric!r}")
            quals.append(p.scores[metric])
    return np.asarray(rates, dtype=np.float64), np.asarray(quals, dtype=np.float64)


def _prepare(rates: np.ndarray, quality: np.ndarray):
    if len(rates) < BD_MIN_POINTS:
        raise ValidationError(f"BD-rate needs >= {BD_MIN_POINTS} points per curve")
    if np.any(rates <= 0):
        raise ValidationError("BD-rate needs strictly positive rates")
    order = np.argsort(quality, kind="stable")
    q = quality[order]
    r = rates[order]
    if np.any(np.diff(q) <= 0):
        raise ValidationError("BD-rate needs strictly monotone quality per curve")
    return r, q


def bd_rate_points(ref_rates, ref_quality, test_rates, test_quality) -> float:
    """BD-rate in percent from raw (rate, quality) samples; negative means
    the test curve needs fewer bits at equal quality."""
    rr, rq = _prepare(np.asarray(ref_rates, dtype=np.float64),
                      np.asarray(ref_quality, dtype=np.float64))
    tr, tq = _prepare(np.asarray(test_rates, dtype=np.float64),
                      np.asarray(test_quality, dtype=np.float64))
    lo = max(rq.min(), tq.min())
    hi = min(rq.max(), tq.max())
    full = max(rq.max(), tq.max()) - min(rq.min(), tq.min())
    if hi - lo < 1e-6 * full:
        raise NonOverlappingCurvesError(
            f"non-overlapping curves: quality ranges [{rq.min()}, {rq.max()}] "
            f"and [{tq.min()}, {tq.max()}]")
    fit_ref = _CubicFit(rq, np.log10(rr))
    fit_test = _CubicFit(tq, np.log10(tr))
    # composite Simpson on the fitted difference
    qs = np.linspace(lo, hi, _SIMPSON_INTERVALS + 1)
    diff = fit_test(qs) - fit_ref(qs)
    h = (hi - lo) / _SIMPSON_INTERVALS
    integral = (h / 3.0) * (diff[0] + diff[-1]
                            + 4.0 * diff[1:-1:2].sum() + 2.0 * diff[2:-1:2].sum())
    mean_diff = integral / (hi - lo)
    return float((10.0 ** mean_diff - 1.0) * 100.0)


def bd_rate(reference, test, metric: str = "psnr") -> float:
    """BD-rate of ``test`` against ``reference`` over one quality metric.

    Curves are lists of RdPoints; the quality axis is PSNR or any score
    the points carry.  Point order does not matter.
    """
    rr, rq = _curve_rq(reference, metric)
    tr, tq = _curve_rq(test, metric)
    return bd_rate_points(rr, rq, tr, tq)
