"""Average precision for comparing suppression variants on KITTI-style frames.

Matching and difficulty gating follow the KITTI devkit conventions:
neighbouring classes (Van for Car, Person_sitting for Pedestrian) and
ground truth outside the difficulty limits are ignored rather than counted,
and unmatched detections mostly inside a DontCare region are ignored.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Box3D, boxes_to_array, iou_pairs

TP, FP, IGNORE = 1, 0, -1

# difficulty -> (min 2D box height px, max occlusion level, max truncation)
DIFFICULTIES = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}
NEIGHBOUR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


@dataclass(frozen=True)
class EvalSpec:
    iou_threshold: dict = field(default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5})
    difficulties: dict = field(default_factory=lambda: dict(DIFFICULTIES))
    recall_points: int = 40
    iou_mode: str = "bev"

    def __post_init__(self):
        for cls, t in self.iou_threshold.items():
            if not 0.0 < t <= 1.0:
                raise ValueError(f"iou_threshold[{cls}] must be in (0, 1], got {t}")
        if self.recall_points not in (11, 40):
            raise ValueError(f"recall_points must be 11 or 40, got {self.recall_points}")

    @property
    def classes(self) -> list:
        return list(self.iou_threshold)

    def recall_positions(self) -> np.ndarray:
        if self.recall_points == 40:
            return np.arange(1, 41) / 40.0
        return np.arange(0, 11) / 10.0


def _overlaps_dont_care(bbox, regions) -> bool:
    left, top, right, bottom = bbox
    area = (right - left) * (bottom - top)
    if area <= 0:
        return False
    for l2, t2, r2, b2 in regions:
        iw = min(right, r2) - max(left, l2)
        ih = min(bottom, b2) - max(top, t2)
        if iw > 0 and ih > 0 and iw * ih / area > 0.5:
            return True
    return False


def match_detections(dets, gts, iou_thresh: float, iou_mode: str = "bev", *,
                     gt_ignored=None, dont_care=()) -> np.ndarray:
    """Flag each detection TP (1), FP (0) or ignored (-1) for one frame and class.

    Detections are visited by descending score; each goes to the unmatched
    ground truth with the highest IoU, ties by index.
    """
    n_det, n_gt = len(dets), len(gts)
    flags = np.full(n_det, FP, dtype=int)
    if n_det == 0:
        return flags
    scores = np.array([d.score for d in dets])
    order = np.lexsort((np.arange(n_det), -scores))
    ignored = np.zeros(n_gt, dtype=bool) if gt_ignored is None else np.asarray(gt_ignored, bool)
    if n_gt:
        da, ga = boxes_to_array(dets), boxes_to_array(gts)
        ii, jj = np.meshgrid(np.arange(n_det), np.arange(n_gt), indexing="ij")
        ious = iou_pairs(da[ii.ravel()], ga[jj.ravel()], iou_mode).reshape(n_det, n_gt)
    matched = np.zeros(n_gt, dtype=bool)
    for d in order:
        if n_gt:
            cand = np.where(matched, -1.0, ious[d])
            g = int(np.argmax(cand))
            if cand[g] >= iou_thresh:
                matched[g] = True
                flags[d] = IGNORE if ignored[g] else TP
                continue
        if dont_care and _overlaps_dont_care(dets[d].bbox_2d, dont_care):
            flags[d] = IGNORE
    return flags


def average_precision(scores, flags, num_gt: int, recall_points: int = 40) -> float:
    """Interpolated AP over ``recall_points`` recall positions (40 or 11).

    Equal scores form one operating point. With ``num_gt == 0`` the result
    is 1 when there are no detections and 0 otherwise.
    """
    scores = np.asarray(scores, dtype=float)
    flags = np.asarray(flags)
    keep = flags != IGNORE
    scores, flags = scores[keep], flags[keep]
    if num_gt == 0:
        return 1.0 if scores.size == 0 else 0.0
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(flags[order] == TP)
    fp = np.cumsum(flags[order] != TP)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp, fp = tp[ends], fp[ends]
    precision = [float(t) / float(t + f) for t, f in zip(tp, fp)]
    recall = [float(t) / float(num_gt) for t in tp]
    if recall_points == 40:
        positions = [k / 40.0 for k in range(1, 41)]
    elif recall_points == 11:
        positions = [k / 10.0 for k in range(0, 11)]
    else:
        raise ValueError(f"recall_points must be 11 or 40, got {recall_points}")
    total = []
    for r in positions:
        best = 0.0
        for p, rc in zip(precision, recall):
            if rc >= r and p > best:
                best = p
        total.append(best)
    return math.fsum(total) / len(positions)


def _gt_ignored(box: Box3D, name: str, cls: str, difficulty) -> bool:
    if name != cls:
        return True
    min_h, max_occ, max_trunc = difficulty
    height = box.bbox_2d[3] - box.bbox_2d[1]
    return height < min_h or box.occluded > max_occ or box.truncated > max_trunc


def evaluate(frames, kept, spec: EvalSpec, label_names: dict) -> dict:
    """AP per class and difficulty.

    ``kept[k]`` lists ``(box index, score)`` of frame ``k``'s surviving
    detections; returns ``{class: {difficulty: AP}}``.
    """
    out = {}
    for cls in spec.classes:
        out[cls] = {}
        related = (cls,) + NEIGHBOUR_CLASSES.get(cls, ())
        for diff_name, diff in spec.difficulties.items():
            all_scores, all_flags, num_gt = [], [], 0
            for frame, survivors in zip(frames, kept):
                gts = [g for g in (frame.ground_truth or [])
                       if label_names.get(g.label) in related]
                ign = [_gt_ignored(g, label_names.get(g.label), cls, diff) for g in gts]
                num_gt += sum(not i for i in ign)
                dets = [replace_score(frame.boxes[i], s) for i, s in survivors
                        if label_names.get(frame.boxes[i].label) == cls]
                flags = match_detections(dets, gts, spec.iou_threshold[cls], spec.iou_mode,
                                         gt_ignored=ign, dont_care=frame.dont_care)
                all_scores.extend(d.score for d in dets)
                all_flags.extend(flags.tolist())
            out[cls][diff_name] = average_precision(all_scores, all_flags, num_gt, spec.recall_points)
    return out


def replace_score(box: Box3D, score: float) -> Box3D:
    if score == box.score:
        return box
    return replace(box, score=min(1.0, max(0.0, float(score))))


@dataclass
class MetricsTable:
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def to_csv(self, timing: bool = True) -> str:
        cols = [c for c in self.columns if timing or not c.startswith("time_")]
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(_fmt(c, row[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"columns": self.columns, "rows": self.rows, "meta": self.meta}


def _fmt(col, value):
    if isinstance(value, str):
        return value
    if col.startswith("time_"):
        return f"{value:.2f}"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def compare_runs(frames, variants: dict, spec: EvalSpec, label_names: dict) -> MetricsTable:
    """Run each ``name -> callable(frame) -> NmsResult`` and tabulate AP and latency."""
    columns = ["method"]
    for cls in spec.classes:
        columns += [f"{cls}_{d}" for d in spec.difficulties]
    columns += ["kept", "suppressed", "filtered", "time_mean_ms", "time_p95_ms"]
    rows = []
    if frames:
        for name, fn in variants.items():
            results, lat = [], []
            for frame in frames:
                t0 = time.perf_counter()
                results.append(fn(frame))
                lat.append((time.perf_counter() - t0) * 1e3)
            ap = evaluate(frames, [r.kept for r in results], spec, label_names)
            row = {"method": name}
            for cls in spec.classes:
                for d in spec.difficulties:
                    row[f"{cls}_{d}"] = ap[cls][d]
            row["kept"] = sum(len(r.kept) for r in results)
            row["suppressed"] = sum(len(r.suppressed) for r in results)
            row["filtered"] = sum(len(r.filtered) for r in results)
            row["time_mean_ms"] = float(np.mean(lat))
            row["time_p95_ms"] = float(np.percentile(lat, 95))
            rows.append(row)
    return MetricsTable(columns, rows, {"iou_mode": spec.iou_mode, "recall_points": spec.recall_points})
