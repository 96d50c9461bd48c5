"""Command-line entry point wiring the laboratory together.

Every subcommand is deterministic given its configuration (seeds
included).  Configuration comes from an optional JSON file plus repeated
``--set key=value`` overrides; ``--print-effective-config`` dumps the
fully resolved configuration and exits.  Results go to files or stdout,
logs to stderr.  Exit codes: 0 success, 1 usage error, 2 data/validation
error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, report
from .blockcodec import Bitstream, decode
from .errors import LnrcError, UsageError, ValidationError
from .image import load_image, psnr, save_image, synth_ugc
from .metrics import (MetricEnsembleSpec, evaluate, resolve_metric, save_ngf)
from .overfit import OverfitConfig, train
from .rdo import (DEFAULT_QP_SWEEP, RdoConfig, curve_from_obj, rdo_encode,
                  sweep)
from .smoothing import SmoothingConfig, smooth_evaluate

_DEFAULT_LAMBDAS = (0.004, 0.001, 0.0004, 0.0001)


def _log(msg: str) -> None:
    if sys.stderr.isatty() and not os.environ.get("NO_COLOR"):
        msg = f"\x1b[36m{msg}\x1b[0m"
    print(msg, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SMOOTHING_SCHEMA = {"sigma": float, "samples": int, "seed": int}
_ENTRY_SCHEMA = {"metric": str, "weight": ("auto", float)}
_ENSEMBLE_SCHEMA = {"entries": list, "alpha": float, "smoothing": dict}
_OVERFIT_SCHEMA = {
    "iterations": int, "warmup": int, "objective": str, "scales": int,
    "lr": float, "lr_end": float, "seed": int,
}
_SCHEMA = {
    "mode": str,
    "base_qp": int,
    "qp_list": list,
    "lambda": ("auto", float),
    "lambda_list": list,
    "delta_qp_range": list,
    "partitions": list,
    "ensemble": dict,
    "eval_metrics": list,
    "overfit": dict,
    "seed": int,
    "jobs": int,
}

_DEFAULTS = {
    "mode": "sse",
    "base_qp": 31,
    "qp_list": list(DEFAULT_QP_SWEEP),
    "lambda": "auto",
    "lambda_list": list(_DEFAULT_LAMBDAS),
    "delta_qp_range": [-4, 4],
    "partitions": [4, 16],
    "ensemble": {
        "entries": [{"metric": "tv-charbonnier", "weight": "auto"}],
        "alpha": 1.0,
    },
    "eval_metrics": ["tv-charbonnier", "blockiness", "sharpness"],
    "overfit": {
        "iterations": 2000, "warmup": 200, "objective": "sse",
        "scales": 4, "lr": 0.01, "lr_end": 0.001, "seed": 0,
    },
    "seed": 0,
    "jobs": 1,
}


def _check_type(key, value, spec):
    if isinstance(spec, tuple):  # literal-or-type alternatives
        for alt in spec:
            if isinstance(alt, str) and value == alt:
                return
            if isinstance(alt, type):
                if alt is float and isinstance(value, (int, float)) \
                        and not isinstance(value, bool):
                    return
                if isinstance(value, alt) and not isinstance(value, bool):
                    return
        raise ValidationError(f"config key {key!r} has bad value {value!r}")
    if spec is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError(f"config key {key!r} must be a number")
        return
    if not isinstance(value, spec) or isinstance(value, bool) and spec is int:
        raise ValidationError(f"config key {key!r} must be {spec.__name__}")


def _validate_section(cfg: dict, schema: dict, prefix="") -> None:
    for key, value in cfg.items():
        if key not in schema:
            raise ValidationError(f"unknown config key {prefix}{key!r}")
        _check_type(prefix + key, value, schema[key])
    if "ensemble" in cfg:
        ens = cfg["ensemble"]
        _validate_section(ens, _ENSEMBLE_SCHEMA, "ensemble.")
        for e in ens.get("entries", []):
            if not isinstance(e, dict):
                raise ValidationError("ensemble entries must be objects")
            _validate_section(e, _ENTRY_SCHEMA, "ensemble.entries.")
        if "smoothing" in ens:
            _validate_section(ens["smoothing"], _SMOOTHING_SCHEMA,
                              "ensemble.smoothing.")
    if "overfit" in cfg:
        _validate_section(cfg["overfit"], _OVERFIT_SCHEMA, "overfit.")


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise UsageError(f"--set needs key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise UsageError(f"--set path {key!r} crosses a non-object")
    node[parts[-1]] = value


def load_config(args) -> dict:
    cfg = dict()
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot load config {args.config}: {e}") from e
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        cfg = loaded
    for assignment in getattr(args, "set", None) or []:
        _apply_set(cfg, assignment)
    _validate_section(cfg, _SCHEMA)
    merged = _deep_merge(_DEFAULTS, cfg)
    if getattr(args, "print_effective_config", False):
        print(json.dumps(merged, indent=2, sort_keys=True))
        raise SystemExit(0)
    return merged


def _ensemble_from_config(cfg: dict) -> MetricEnsembleSpec:
    ens = cfg["ensemble"]
    entries = tuple((e["metric"], e.get("weight", "auto")) for e in ens["entries"])
    smoothing = None
    if "smoothing" in ens:
        s = ens["smoothing"]
        smoothing = SmoothingConfig(sigma=float(s["sigma"]),
                                    samples=int(s.get("samples", 5)),
                                    seed=int(s.get("seed", cfg["seed"])))
    return MetricEnsembleSpec(entries, alpha=float(ens.get("alpha", 1.0)),
                              smoothing=smoothing)


def _rdo_config(cfg: dict, base_qp: int | None = None) -> RdoConfig:
    return RdoConfig(
        mode=cfg["mode"],
        ensemble=_ensemble_from_config(cfg) if cfg["mode"] == "lnrm" else None,
        base_qp=cfg["base_qp"] if base_qp is None else base_qp,
        lam=cfg["lambda"],
        dqp_range=tuple(cfg["delta_qp_range"]),
        partitions=tuple(cfg["partitions"]),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_encode(args) -> int:
    cfg = load_config(args)
    img = load_image(args.input)
    bs, recon, point = rdo_encode(img, _rdo_config(cfg))
    report.atomic_write_bytes(args.output, bs.to_bytes())
    if args.recon_out:
        save_image(recon, args.recon_out)
    _log(f"encoded {args.input}: {bs.bit_length} bits, "
         f"{point.bpp:.4f} bpp, psnr {point.psnr_db:.2f} dB")
    return 0


def _cmd_decode(args) -> int:
    bs = Bitstream.load(args.input)
    save_image(decode(bs), args.output)
    return 0


def _cmd_grad(args, smoothed: bool) -> int:
    cfg = load_config(args)
    img = load_image(args.input)
    metric = resolve_metric(args.metric)
    if smoothed:
        scfg = SmoothingConfig(sigma=args.sigma, samples=args.samples,
                               seed=args.seed if args.seed is not None else cfg["seed"])
        score, grad = smooth_evaluate(metric, img, scfg)
        from .metrics import MetricEvaluation
        ev = MetricEvaluation(score, grad)
    else:
        ev = evaluate(metric, img)
    save_ngf(ev, args.metric, args.output)
    _log(f"{args.metric}({args.input}) = {ev.score!r} -> {args.output}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args)
    img = load_image(args.input)
    curve = sweep(img, cfg["qp_list"], _rdo_config(cfg),
                  eval_metrics=cfg["eval_metrics"], jobs=cfg["jobs"])
    report.write_curve_json(curve, args.output)
    if args.csv:
        report.atomic_write_text(args.csv, report.curve_csv_text({"sweep": curve}))
    _log(f"sweep {args.input}: {len(curve)} points -> {args.output}")
    return 0


def _overfit_point(task):
    img, ocfg = task
    return train(img, ocfg)


def _cmd_overfit(args) -> int:
    cfg = load_config(args)
    img = load_image(args.input)
    out_dir = Path(args.outdir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ocfg_base = cfg["overfit"]
    objective = ocfg_base["objective"]
    needs_ensemble = objective != "sse"
    from .rdo import RdPoint
    points = []
    tasks = []
    for lam in cfg["lambda_list"]:
        tasks.append((img, OverfitConfig(
            lam=float(lam),
            iterations=ocfg_base["iterations"],
            warmup=ocfg_base["warmup"],
            objective=objective,
            ensemble=_ensemble_from_config(cfg) if needs_ensemble else None,
            scales=ocfg_base["scales"],
            lr=ocfg_base["lr"],
            lr_end=ocfg_base["lr_end"],
            seed=ocfg_base["seed"],
            eval_metrics=tuple(cfg["eval_metrics"]),
        )))
    if cfg["jobs"] > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as ex:
            results = list(ex.map(_overfit_point, tasks))
    else:
        results = [_overfit_point(t) for t in tasks]
    for (_, ocfg), res in zip(tasks, results):
        stem = f"overfit_{objective}_lambda{ocfg.lam:g}"
        report.atomic_write_text(out_dir / f"{stem}.json",
                                 json.dumps(res.to_obj(), indent=2, sort_keys=True) + "\n")
        points.append(RdPoint(qp=None, bpp=res.bpp, psnr_db=res.psnr_db,
                              scores=res.scores,
                              ms=res.ms_warmup + res.ms_main))
        _log(f"lambda={ocfg.lam:g}: {res.bpp:.4f} bpp, psnr {res.psnr_db:.2f} dB")
    points.sort(key=lambda p: p.bpp)
    report.write_curve_json(points, out_dir / f"curve_{objective}.json")
    return 0


def _load_curve(path):
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot load curve {path}: {e}") from e
    return curve_from_obj(obj)


def _cmd_bdrate(args) -> int:
    ref = _load_curve(args.reference)
    test = _load_curve(args.test)
    value = analysis.bd_rate(ref, test, args.metric)
    print(f"{value:.2f}%")
    if args.output:
        report.atomic_write_text(args.output, json.dumps(
            {"metric": args.metric, "bdrate_percent": value}, sort_keys=True) + "\n")
    return 0


def _scores_from_curves(paths):
    rows = []
    row_ids = []
    metric_ids = None
    for path in paths:
        for i, p in enumerate(_load_curve(path)):
            keys = sorted(p.scores)
            if metric_ids is None:
                metric_ids = keys
            elif keys != metric_ids:
                raise ValidationError(f"{path}: point {i} metrics differ from others")
            rows.append([p.scores[k] for k in metric_ids])
            row_ids.append(f"{Path(path).stem}:{i}")
    if metric_ids is None:
        raise ValidationError("no curve points given")
    return analysis.ScoreTable(tuple(row_ids), tuple(metric_ids), np.array(rows))


def _read_score_csv(path) -> analysis.ScoreTable:
    import csv
    with open(path, newline="") as f:
        reader = list(csv.reader(f))
    if len(reader) < 2 or reader[0][:1] != ["id"]:
        raise ValidationError(f"{path}: expected header 'id,<metric>,...'")
    metric_ids = tuple(reader[0][1:])
    row_ids = tuple(r[0] for r in reader[1:])
    values = np.array([[float(v) for v in r[1:]] for r in reader[1:]])
    return analysis.ScoreTable(row_ids, metric_ids, values)


def _matrix_csv_text(names, m) -> str:
    lines = ["," + ",".join(names)]
    for i, name in enumerate(names):
        lines.append(name + "," + ",".join(repr(float(v)) for v in m[i]))
    return "\n".join(lines) + "\n"


def _read_matrix_csv(path):
    import csv
    with open(path, newline="") as f:
        reader = list(csv.reader(f))
    names = reader[0][1:]
    m = np.array([[float(v) for v in r[1:]] for r in reader[1:]])
    return names, m


def _cmd_corr(args) -> int:
    if args.scores:
        table = _read_score_csv(args.scores)
    elif args.curves:
        table = _scores_from_curves(args.curves)
    else:
        raise UsageError("corr needs --scores or --curves")
    rho = analysis.spearman_matrix(table)
    d = analysis.dissimilarity(rho)
    out_dir = Path(args.outdir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.atomic_write_text(out_dir / "spearman.csv",
                             _matrix_csv_text(table.metric_ids, rho))
    report.atomic_write_text(out_dir / "dissimilarity.csv",
                             _matrix_csv_text(table.metric_ids, d))
    _log(f"correlation over {len(table.row_ids)} rows x "
         f"{len(table.metric_ids)} metrics -> {out_dir}")
    return 0


def _cmd_mds(args) -> int:
    if args.dissimilarity:
        names, d = _read_matrix_csv(args.dissimilarity)
    elif args.scores:
        table = _read_score_csv(args.scores)
        names = list(table.metric_ids)
        d = analysis.dissimilarity(analysis.spearman_matrix(table))
    else:
        raise UsageError("mds needs --dissimilarity or --scores")
    emb = analysis.mds_embed(d)
    emb.labels = analysis.cluster(d, args.threshold)
    out_dir = Path(args.outdir)
    report.emit_report({}, {}, emb, out_dir, embedding_names=names)
    n_clusters = len(set(emb.labels.tolist()))
    _log(f"{len(names)} metrics -> {n_clusters} clusters at threshold {args.threshold}")
    if emb.degenerate:
        _log("warning: degenerate embedding (fewer than 2 non-negative eigenvalues)")
    return 0


def _cmd_synth_ugc(args) -> int:
    cfg = load_config(args)
    img = load_image(args.input)
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = synth_ugc(img, args.kind, args.strength, seed)
    save_image(out, args.output)
    _log(f"synth-ugc {args.kind} strength={args.strength:g} seed={seed} "
         f"psnr-vs-source {psnr(img, out):.2f} dB")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return run_selftest()


def build_parser() -> _Parser:
    parser = _Parser(prog="lnrc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        p.add_argument("--print-effective-config", action="store_true",
                       help="print the resolved configuration and exit")

    p = sub.add_parser("encode", help="hybrid codec: image -> bitstream")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--recon-out", help="also write the encoder reconstruction")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="hybrid codec: bitstream -> image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("grad", help="export a metric gradient as NGF")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=lambda a: _cmd_grad(a, smoothed=False))

    p = sub.add_parser("smooth-grad", help="export a smoothed metric gradient as NGF")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=lambda a: _cmd_grad(a, smoothed=True))

    p = sub.add_parser("sweep", help="rate-distortion sweep over a QP list")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="curve JSON path")
    p.add_argument("--csv", help="also write the curve as CSV")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("overfit", help="overfitted codec over a lambda list")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_overfit)

    p = sub.add_parser("bdrate", help="BD-rate between two stored curves")
    p.add_argument("--reference", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", default="psnr")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_bdrate)

    p = sub.add_parser("corr", help="Spearman correlation and dissimilarity")
    p.add_argument("--scores", help="score table CSV (id column + metric columns)")
    p.add_argument("--curves", nargs="*", help="curve JSON files")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_corr)

    p = sub.add_parser("mds", help="embed and cluster a metric dissimilarity matrix")
    p.add_argument("--dissimilarity", help="matrix CSV from corr")
    p.add_argument("--scores", help="score table CSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_mds)

    p = sub.add_parser("synth-ugc", help="generate degraded test content")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", required=True,
                   choices=["gaussian-noise", "precompressed", "both"])
    p.add_argument("--strength", type=float, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth_ugc)

    p = sub.add_parser("selftest", help="run the built-in invariant battery")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        _log(f"usage error: {e}")
        return 1
    except ValidationError as e:
        _log(f"error: {e}")
        return 2
    except LnrcError as e:
        _log(f"internal error: {e}")
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        _log(f"internal error: {type(e).__name__}: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
