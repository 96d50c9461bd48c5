"""Report emission: CSV tables, JSON summaries and static SVG plots.

Outputs are deterministic byte-for-byte for identical inputs (no
timestamps, fixed float formatting, sorted keys) and written atomically
(temp file + rename).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .analysis import MdsEmbedding
from .rdo import curve_to_obj

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _fmt(v) -> str:
    return repr(float(v))


def write_curve_json(curve, path) -> None:
    atomic_write_text(path, json.dumps(curve_to_obj(curve), indent=2,
                                       sort_keys=True) + "\n")


def _score_columns(curves: dict) -> list:
    cols = set()
    for curve in curves.values():
        for p in curve:
            cols.update(p.scores)
    return sorted(cols)


def curve_csv_text(curves: dict) -> str:
    cols = _score_columns(curves)
    lines = [",".join(["method", "qp", "bpp", "psnr_db", "ms"] + cols)]
    for name in sorted(curves):
        for p in curves[name]:
            row = [name, "" if p.qp is None else str(p.qp), _fmt(p.bpp),
                   _fmt(p.psnr_db), _fmt(p.ms)]
            row += [_fmt(p.scores[c]) if c in p.scores else "" for c in cols]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def bd_table_csv_text(bd_table: dict) -> str:
    lines = ["method,metric,bdrate_percent"]
    for method in sorted(bd_table):
        for metric in sorted(bd_table[method]):
            v = bd_table[method][metric]
            lines.append(f"{method},{metric}," + (v if isinstance(v, str) else _fmt(v)))
    return "\n".join(lines) + "\n"


def _svg_header(width: int, height: int, title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" font-family="monospace">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="16" text-anchor="middle" font-size="13">{title}</text>',
    ]


def line_plot_svg(series: dict, x_label: str, y_label: str, title: str,
                  width: int = 640, height: int = 480) -> str:
    """Self-contained SVG with one polyline per series; axes are <line>
    elements so the polyline count equals the curve count."""
    left, right, top, bottom = 64, 20, 28, 48
    pw, ph = width - left - right, height - top - bottom
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = _svg_header(width, height, title)
    ax = f'stroke="black" stroke-width="1"'
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" {ax}/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" {ax}/>')
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        out.append(f'<text x="{px(xv):.2f}" y="{top + ph + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(yv):.2f}" text-anchor="end" '
                   f'font-size="10">{yv:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle" '
               f'font-size="11">{x_label}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" font-size="11" '
               f'transform="rotate(-90 14 {top + ph / 2:.2f})">{y_label}</text>')
    for k, name in enumerate(sorted(series)):
        color = _PALETTE[k % len(_PALETTE)]
        pts = sorted(series[name])
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + 14 + 14 * k}" text-anchor="end" '
                   f'font-size="11" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(points: dict, title: str, width: int = 480, height: int = 480) -> str:
    left, right, top, bottom = 48, 20, 28, 32
    pw, ph = width - left - right, height - top - bottom
    xs = [p[0] for p in points.values()]
    ys = [p[1] for p in points.values()]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    mx = max(x1 - x0, 1e-9) * 0.1
    my = max(y1 - y0, 1e-9) * 0.1
    x0, x1, y0, y1 = x0 - mx, x1 + mx, y0 - my, y1 + my
    out = _svg_header(width, height, title)
    for name in sorted(points):
        x, y = points[name][:2]
        label = points[name][2] if len(points[name]) > 2 else 0
        color = _PALETTE[int(label) % len(_PALETTE)]
        cx = left + (x - x0) / (x1 - x0) * pw
        cy = top + ph - (y - y0) / (y1 - y0) * ph
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{color}"/>')
        out.append(f'<text x="{cx + 6:.2f}" y="{cy - 6:.2f}" font-size="10">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(curves: dict, bd_table: dict, embedding: MdsEmbedding | None,
                out_dir, embedding_names=None) -> list:
    """Write rd_points.csv, bd_table.csv, summary.json and per-metric SVG
    plots (plus the embedding scatter when given); returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "rd_points.csv"
    atomic_write_text(path, curve_csv_text(curves))
    written.append(path)

    path = out_dir / "bd_table.csv"
    atomic_write_text(path, bd_table_csv_text(bd_table))
    written.append(path)

    summary = {
        "bd_rate_percent": {m: dict(sorted(v.items())) for m, v in sorted(bd_table.items())},
        "fit": "cubic-log-rate",
    }
    path = out_dir / "summary.json"
    atomic_write_text(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(path)

    metrics = ["psnr"] + _score_columns(curves)
    for metric in metrics:
        series = {}
        for name, curve in curves.items():
            pts = []
            for p in curve:
                q = p.psnr_db if metric == "psnr" else p.scores.get(metric)
                if q is not None and np.isfinite(q) and np.isfinite(p.bpp):
                    pts.append((p.bpp, q))
            if pts:
                series[name] = pts
        if not series:
            continue
        safe = metric.replace(":", "_").replace("/", "_").replace("@", "_")
        path = out_dir / f"plot_{safe}.svg"
        atomic_write_text(path, line_plot_svg(
            series, "bits per pixel", metric, f"rate vs {metric}"))
        written.append(path)

    if embedding is not None:
        names = list(embedding_names) if embedding_names is not None else \
            [f"m{i}" for i in range(embedding.coords.shape[0])]
        labels = embedding.labels if embedding.labels is not None \
            else np.zeros(len(names), dtype=np.int64)
        lines = ["metric,x,y,cluster"]
        for i, name in enumerate(names):
            lines.append(f"{name},{_fmt(embedding.coords[i, 0])},"
                         f"{_fmt(embedding.coords[i, 1])},{int(labels[i])}")
        path = out_dir / "embedding.csv"
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
        pts = {name: (embedding.coords[i, 0], embedding.coords[i, 1], int(labels[i]))
               for i, name in enumerate(names)}
        path = out_dir / "embedding.svg"
        atomic_write_text(path, scatter_svg(pts, "metric correlation embedding"))
        written.append(path)
    return written
