"""End-to-end per-frame runners for every suppression variant."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import ClusterAssignment, cluster_density, dbscan
from .config import ToolkitConfig, load_config
from .fuzzy import FrameClassification, classify_boxes
from .geometry import Frame
from .nms import NmsResult, diou_nms, fuzzy_nms, soft_nms, traditional_nms

VARIANTS = ("traditional", "soft", "diou", "fuzzy")
BENCH_WARMUP = 10


@dataclass(frozen=True)
class BaselineOptions:
    """Knobs for the single-threshold baselines."""

    iou: float = 0.01
    score: float | None = 0.1
    sigma: float = 0.5
    soft_final: float = 0.001
    per_label: bool = False


@dataclass
class FrameOutput:
    frame_id: str
    result: NmsResult
    analysis: dict | None = None  # box index -> fuzzy diagnostics
    latency_ms: float = 0.0
    classification: FrameClassification | None = field(default=None, repr=False)


def run_fuzzy(frame: Frame, config: ToolkitConfig):
    """Density, volume, fuzzy classification and Fuzzy-NMS for one frame.

    Returns ``(result, classification, subset)`` where ``subset`` lists the
    original indices that passed the optional confidence pre-filter and
    ``classification`` is aligned with it.
    """
    pre = config.nms.pre_filter_score
    if pre is None:
        subset = list(range(len(frame.boxes)))
        sub = frame
    else:
        subset = [i for i, b in enumerate(frame.boxes) if b.score >= pre]
        sub = replace(frame, boxes=[frame.boxes[i] for i in subset])
    arr = sub.array()
    ids = dbscan(arr[:, :3], config.dbscan)
    assignment = ClusterAssignment(cluster_id=ids, density=cluster_density(ids))
    cls = classify_boxes(sub, assignment, config.system, volume=arr[:, 3] * arr[:, 4] * arr[:, 5])
    res = fuzzy_nms(arr, cls.categories, config.nms, scores=sub.scores)
    if pre is not None:
        m = subset
        dropped = sorted(set(range(len(frame.boxes))) - set(subset))
        res = NmsResult(
            kept=[(m[i], s) for i, s in res.kept],
            suppressed=[(m[j], m[i]) for j, i in res.suppressed],
            filtered=sorted([m[i] for i in res.filtered] + dropped),
            counts={**res.counts, "pre_filtered": len(dropped)},
            meta={**res.meta, "pre_filter_score": pre},
        )
    return res, cls, subset


def analysis_rows(cls: FrameClassification, subset) -> dict:
    out = {}
    for k, i in enumerate(subset):
        out[i] = {
            "cluster_id": int(cls.cluster_id[k]),
            "density": float(cls.density[k]),
            "volume": float(cls.volume[k]),
            "v_o": float(cls.value[k]),
            "category": cls.categories[k].category.value,
            "degenerate": bool(cls.degenerate[k]),
        }
    return out


def run_variant(frame: Frame, variant: str, config: ToolkitConfig,
                options: BaselineOptions = BaselineOptions()):
    """Run one variant; returns ``(NmsResult, classification, subset)``."""
    mode = config.nms.iou_mode
    if variant == "fuzzy":
        return run_fuzzy(frame, config)
    if variant == "traditional":
        res = traditional_nms(frame.boxes, None, options.iou, mode,
                              score_threshold=options.score, per_label=options.per_label)
    elif variant == "diou":
        res = diou_nms(frame.boxes, None, options.iou, mode,
                       score_threshold=options.score, per_label=options.per_label)
    elif variant == "soft":
        res = soft_nms(frame.boxes, None, options.sigma, options.soft_final, mode,
                       per_label=options.per_label)
    else:
        raise ValueError(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
    return res, None, None


def run_frame(frame: Frame, variant: str, config: ToolkitConfig,
              options: BaselineOptions = BaselineOptions()) -> FrameOutput:
    t0 = time.perf_counter()
    res, cls, subset = run_variant(frame, variant, config, options)
    elapsed = (time.perf_counter() - t0) * 1e3
    analysis = analysis_rows(cls, subset) if cls is not None else None
    return FrameOutput(frame.frame_id, res, analysis, elapsed, cls)


def _run_star(args):
    return run_frame(*args)


def run_frames(frames, variant: str, config: ToolkitConfig | None = None,
               options: BaselineOptions = BaselineOptions(), jobs: int = 1,
               warmup: int = 0) -> list:
    """Run a variant over frames; output order follows input order for any ``jobs``.

    ``warmup`` frames are run once untimed before the timed pass.
    """
    config = config or load_config()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
    for frame in frames[:warmup]:
        run_variant(frame, variant, config, options)
    if jobs <= 1 or len(frames) <= 1:
        return [run_frame(f, variant, config, options) for f in frames]
    args = [(f, variant, config, options) for f in frames]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_star, args, chunksize=max(1, len(args) // (4 * jobs))))


def latency_stats(outputs) -> dict:
    lat = np.array([o.latency_ms for o in outputs], dtype=float)
    if lat.size == 0:
        return {"frames": 0, "mean_ms": 0.0, "p95_ms": 0.0, "max_ms": 0.0}
    return {
        "frames": int(lat.size),
        "mean_ms": round(float(lat.mean()), 3),
        "p95_ms": round(float(np.percentile(lat, 95)), 3),
        "max_ms": round(float(lat.max()), 3),
    }
