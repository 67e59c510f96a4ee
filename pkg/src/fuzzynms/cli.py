"""Command-line driver: ``fuzzy-nms {run,compare,inspect}``.

Exit codes: 0 success, 2 missing or unreadable input, 3 invalid config,
variant or option value.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import estimate
from .config import ENV_VAR, ConfigError, ToolkitConfig, from_dict, load_config, resolve_config_path
from .evaluation import EvalSpec, compare_runs
from .io_kitti import KittiParseError, read_frames, write_results
from .pipeline import BENCH_WARMUP, VARIANTS, BaselineOptions, latency_stats, run_frames, run_variant
from .fuzzy import classify_boxes
from .geometry import IOU_MODES

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 2, 3
FORMATS = ("kitti", "json", "csv")
MF_SAMPLES = 100

log = logging.getLogger("fuzzynms")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fuzzy-nms", description="Fuzzy-NMS post-processing toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_input=True):
        sp.add_argument("--input", required=need_input, help="directory of per-frame detection .txt files")
        sp.add_argument("--labels", help="directory of per-frame KITTI label files")
        sp.add_argument("--config", help=f"YAML config or 'default' (fallback: ${ENV_VAR})")
        sp.add_argument("--iou-mode", help="override the config iou_mode (bev or 3d)")
        sp.add_argument("--output", required=True, help="output directory")

    def baseline(sp):
        d = BaselineOptions()
        sp.add_argument("--iou", type=float, default=d.iou, help="IoU threshold of traditional/DIoU NMS")
        sp.add_argument("--score", type=float, default=d.score,
                        help="post-NMS score threshold of traditional/DIoU NMS")
        sp.add_argument("--sigma", type=float, default=d.sigma, help="Soft-NMS Gaussian sigma")
        sp.add_argument("--per-label", action="store_true", help="baselines suppress within detector labels only")

    run = sub.add_parser("run", help="run one NMS variant over a directory of frames")
    common(run)
    baseline(run)
    run.add_argument("--variant", default="fuzzy", help=f"one of {', '.join(VARIANTS)}")
    run.add_argument("--format", default="kitti", help=f"one of {', '.join(FORMATS)}")
    run.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes (default: CPU count)")
    run.add_argument("--bench", action="store_true", help=f"warm up on {BENCH_WARMUP} frames before timing")

    cmp_ = sub.add_parser("compare", help="AP and latency table over several variants")
    common(cmp_)
    baseline(cmp_)
    cmp_.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated variant names")
    cmp_.add_argument("--recall-points", type=int, default=40, choices=(11, 40))
    cmp_.add_argument("--eval-iou-mode", default=None, help="IoU mode for matching (default: --iou-mode)")

    ins = sub.add_parser("inspect", help="dump membership curves, rule firings and frame statistics as CSV")
    common(ins, need_input=False)
    ins.add_argument("--frame", action="append", help="frame id to dump (repeatable; default all)")
    ins.add_argument("--bins", type=int, default=20, help="histogram bin count")
    return p


def _load(args) -> ToolkitConfig:
    path = resolve_config_path(args.config)
    try:
        cfg = load_config(path)
        if args.iou_mode is not None:
            if args.iou_mode not in IOU_MODES:
                raise ConfigError(f"--iou-mode must be one of {', '.join(IOU_MODES)}, got {args.iou_mode!r}")
            raw = cfg.to_dict()
            raw["nms"]["iou_mode"] = args.iou_mode
            cfg = from_dict(raw)
    except ConfigError as exc:
        raise CliError(f"invalid config: {exc}", EXIT_CONFIG) from exc
    return cfg


def _frames(args, cfg: ToolkitConfig) -> list:
    det_dir = Path(args.input)
    if not det_dir.is_dir():
        raise CliError(f"input directory not found: {det_dir}", EXIT_INPUT)
    if args.labels is not None and not Path(args.labels).is_dir():
        raise CliError(f"label directory not found: {args.labels}", EXIT_INPUT)
    try:
        return read_frames(det_dir, args.labels, cfg.categories, cfg.unknown_category)
    except KittiParseError as exc:
        raise CliError(f"parse error: {exc}", EXIT_INPUT) from exc
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_INPUT) from exc


def _options(args) -> BaselineOptions:
    for name in ("iou", "score"):
        v = getattr(args, name)
        if v is not None and not 0.0 <= v <= 1.0:
            raise CliError(f"--{name} must be in [0, 1], got {v}", EXIT_CONFIG)
    if args.sigma <= 0:
        raise CliError(f"--sigma must be > 0, got {args.sigma}", EXIT_CONFIG)
    return BaselineOptions(iou=args.iou, score=args.score, sigma=args.sigma, per_label=args.per_label)


def _check_variant(name):
    if name not in VARIANTS:
        raise CliError(f"unknown variant {name!r}; valid variants: {', '.join(VARIANTS)}", EXIT_CONFIG)


def _dump_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def cmd_run(args) -> int:
    _check_variant(args.variant)
    if args.format not in FORMATS:
        raise CliError(f"unknown format {args.format!r}; valid formats: {', '.join(FORMATS)}", EXIT_CONFIG)
    if args.jobs < 1:
        raise CliError(f"--jobs must be >= 1, got {args.jobs}", EXIT_CONFIG)
    cfg = _load(args)
    options = _options(args)
    frames = _frames(args, cfg)
    jobs = 1 if args.bench else args.jobs
    outputs = run_frames(frames, args.variant, cfg, options, jobs=jobs,
                         warmup=BENCH_WARMUP if args.bench else 0)

    out = Path(args.output)
    meta = {"variant": args.variant, "config_hash": cfg.hash()}
    write_results(frames, [o.result for o in outputs], out, args.format, cfg.label_names(),
                  [o.analysis for o in outputs], meta)
    per_frame = []
    for frame, o in zip(frames, outputs):
        per_frame.append({
            "frame_id": frame.frame_id,
            "input": len(frame.boxes),
            "kept": len(o.result.kept),
            "suppressed": len(o.result.suppressed),
            "filtered": len(o.result.filtered),
            "skipped": frame.skipped,
            "counts": o.result.counts,
        })
    manifest = {
        "tool": "fuzzy-nms",
        "version": __version__,
        "variant": args.variant,
        "iou_mode": cfg.iou_mode,
        "format": args.format,
        "config_hash": cfg.hash(),
        "options": _options_dict(args.variant, options),
        "frames": per_frame,
        "totals": {k: sum(f[k] for f in per_frame) for k in ("input", "kept", "suppressed", "filtered", "skipped")},
        "latency": {**latency_stats(outputs), "bench": bool(args.bench),
                    "warmup": BENCH_WARMUP if args.bench else 0, "jobs": jobs},
    }
    _dump_json(out / "manifest.json", manifest)
    log.info("%s: %d frames -> %s", args.variant, len(frames), out)
    return EXIT_OK


def _options_dict(variant, options: BaselineOptions) -> dict:
    if variant in ("traditional", "diou"):
        return {"iou": options.iou, "score": options.score, "per_label": options.per_label}
    if variant == "soft":
        return {"sigma": options.sigma, "final_score": options.soft_final, "per_label": options.per_label}
    return {}


def cmd_compare(args) -> int:
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    for name in names:
        _check_variant(name)
    cfg = _load(args)
    options = _options(args)
    frames = _frames(args, cfg)
    eval_mode = args.eval_iou_mode or cfg.iou_mode
    if eval_mode not in IOU_MODES:
        raise CliError(f"--eval-iou-mode must be one of {', '.join(IOU_MODES)}", EXIT_CONFIG)
    spec = EvalSpec(recall_points=args.recall_points, iou_mode=eval_mode)
    variants = {name: _runner(name, cfg, options) for name in names}
    table = compare_runs(frames, variants, spec, cfg.label_names())
    table.meta.update({"config_hash": cfg.hash(), "frames": len(frames)})

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(table.to_csv())
    _dump_json(out / "metrics.json", table.to_json())
    sys.stdout.write(table.to_csv(timing=True))
    return EXIT_OK


def _runner(name, cfg, options):
    def fn(frame):
        return run_variant(frame, name, cfg, options)[0]
    return fn


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _mf_rows(cfg: ToolkitConfig) -> list:
    rows = []
    for var in (cfg.system.density, cfg.system.volume, cfg.system.output):
        xs = [var.lo + (var.hi - var.lo) * i / MF_SAMPLES for i in range(MF_SAMPLES + 1)]
        for name, mf in var.sets:
            for x in xs:
                rows.append((var.name, name, x, float(mf(x))))
    return rows


def cmd_inspect(args) -> int:
    cfg = _load(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    system = cfg.system
    _write_csv(out / "membership.csv", ("variable", "set", "x", "mu"), _mf_rows(cfg))
    _write_csv(out / "rules.csv", ("rule", "density", "volume", "class"),
               [(k + 1, *r) for k, r in enumerate(system.rules.rules)])
    if args.input is None:
        return EXIT_OK

    frames = _frames(args, cfg)
    if args.frame:
        wanted = set(args.frame)
        missing = sorted(wanted - {f.frame_id for f in frames})
        if missing:
            raise CliError(f"frames not found in {args.input}: {', '.join(missing)}", EXIT_INPUT)
        frames = [f for f in frames if f.frame_id in wanted]
    if args.bins < 1:
        raise CliError(f"--bins must be >= 1, got {args.bins}", EXIT_CONFIG)

    box_rows, cluster_rows, firing_rows = [], [], []
    all_density, all_volume = [], []
    rule_names = [f"r{k + 1}" for k in range(len(system.rules.rules))]
    for frame in frames:
        assignment = estimate(frame, cfg.dbscan)
        cls = classify_boxes(frame, assignment, system)
        w = system.firing_strengths(cls.density, cls.volume) if len(frame.boxes) else np.zeros((0, len(rule_names)))
        for k, box in enumerate(frame.boxes):
            box_rows.append((frame.frame_id, k, float(cls.density[k]), float(cls.volume[k]),
                             float(cls.value[k]), cls.categories[k].category.value, bool(cls.degenerate[k])))
            cluster_rows.append((frame.frame_id, k, box.cx, box.cy, box.cz, int(cls.cluster_id[k])))
            firing_rows.append((frame.frame_id, k, *(float(x) for x in w[k])))
        all_density.extend(cls.density.tolist())
        all_volume.extend(cls.volume.tolist())

    _write_csv(out / "boxes.csv", ("frame_id", "index", "density", "volume", "v_o", "category", "degenerate"),
               box_rows)
    _write_csv(out / "clusters.csv", ("frame_id", "index", "cx", "cy", "cz", "cluster_id"), cluster_rows)
    _write_csv(out / "rule_firings.csv", ("frame_id", "index", *rule_names), firing_rows)
    d_lo, d_hi = system.density.lo, system.density.hi
    v_lo = system.volume.lo
    v_hi = max([system.volume.hi] + all_volume)
    for name, values, lo, hi in (("density", all_density, d_lo, d_hi), ("volume", all_volume, v_lo, v_hi)):
        counts, edges = np.histogram(np.clip(values, lo, hi), bins=args.bins, range=(lo, hi))
        _write_csv(out / f"histogram_{name}.csv", ("bin_lo", "bin_hi", "count"),
                   [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)])
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "inspect": cmd_inspect}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"fuzzy-nms {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
