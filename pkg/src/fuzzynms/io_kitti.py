"""KITTI label/detection text and result serialisation.

KITTI stores the bottom centre of each object in camera coordinates
(x right, y down, z forward) with ``rotation_y`` about the camera y axis.
Boxes are converted to the toolkit's z-up frame on parse::

    cx = x      cy = z      cz = h/2 - y      (dx, dy, dz) = (l, w, h)
    yaw = -rotation_y

so the footprint lies in (cx, cy) and ``cz`` is the geometric centre height.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

from .geometry import Box3D, Frame, normalize_yaw
from .config import DEFAULT_CATEGORIES

log = logging.getLogger(__name__)

FIELDS = ("type", "truncated", "occluded", "alpha", "left", "top", "right", "bottom",
          "h", "w", "l", "x", "y", "z", "rotation_y", "score")
DONT_CARE = "DontCare"


class KittiParseError(ValueError):
    def __init__(self, message, line=None, field=None, source=""):
        where = source + (f":{line}" if line is not None else "")
        prefix = f"{where}: " if where else ""
        extra = f" (field {field!r})" if field else ""
        super().__init__(f"{prefix}{message}{extra}")
        self.line = line
        self.field = field


@dataclass(frozen=True)
class KittiRecord:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox_2d: tuple
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: float | None = None

    def to_line(self) -> str:
        vals = [self.type, f"{self.truncated:.6f}", str(int(self.occluded)), f"{self.alpha:.6f}"]
        vals += [f"{v:.6f}" for v in self.bbox_2d]
        vals += [f"{v:.6f}" for v in (self.h, self.w, self.l, self.x, self.y, self.z, self.rotation_y)]
        if self.score is not None:
            vals.append(f"{self.score:.6f}")
        return " ".join(vals)


def parse_line(line: str, lineno: int | None = None, source: str = "",
               require_score: bool = False) -> KittiRecord:
    parts = line.split()
    allowed = (16,) if require_score else (15, 16)
    if len(parts) not in allowed:
        raise KittiParseError(
            f"expected {' or '.join(map(str, allowed))} fields, got {len(parts)}", lineno,
            source=source,
        )
    vals = {}
    for k, (name, raw) in enumerate(zip(FIELDS, parts)):
        if k == 0:
            continue
        try:
            vals[name] = float(raw)
        except ValueError:
            raise KittiParseError(f"not a number: {raw!r}", lineno, name, source) from None
        if not math.isfinite(vals[name]):
            raise KittiParseError(f"not finite: {raw!r}", lineno, name, source)
    occluded = vals["occluded"]
    if occluded != int(occluded):
        raise KittiParseError(f"occluded must be an integer, got {parts[2]!r}", lineno, "occluded", source)
    rec = KittiRecord(
        type=parts[0],
        truncated=vals["truncated"],
        occluded=int(occluded),
        alpha=vals["alpha"],
        bbox_2d=(vals["left"], vals["top"], vals["right"], vals["bottom"]),
        h=vals["h"], w=vals["w"], l=vals["l"],
        x=vals["x"], y=vals["y"], z=vals["z"],
        rotation_y=vals["rotation_y"],
        score=vals.get("score"),
    )
    if rec.type != DONT_CARE:
        for name in ("h", "w", "l"):
            if getattr(rec, name) <= 0:
                raise KittiParseError(f"{name} must be > 0, got {getattr(rec, name)}", lineno, name, source)
        if rec.score is not None and not 0.0 <= rec.score <= 1.0:
            raise KittiParseError(f"score must be in [0, 1], got {rec.score}", lineno, "score", source)
    return rec


def parse_records(text: str | None, source: str = "", require_score: bool = False) -> list:
    if not text:
        return []
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        out.append(parse_line(line, lineno, source, require_score))
    return out


def record_to_box(rec: KittiRecord, label: int) -> Box3D:
    return Box3D(
        cx=rec.x, cy=rec.z, cz=rec.h / 2.0 - rec.y,
        dx=rec.l, dy=rec.w, dz=rec.h,
        yaw=-rec.rotation_y,
        label=label,
        score=1.0 if rec.score is None else rec.score,
        truncated=rec.truncated, occluded=rec.occluded, alpha=rec.alpha, bbox_2d=rec.bbox_2d,
    )


def box_to_record(box: Box3D, type_name: str, score: float | None = None) -> KittiRecord:
    return KittiRecord(
        type=type_name,
        truncated=box.truncated, occluded=box.occluded, alpha=box.alpha, bbox_2d=box.bbox_2d,
        h=box.dz, w=box.dy, l=box.dx,
        x=box.cx, y=box.dz / 2.0 - box.cz, z=box.cy,
        rotation_y=normalize_yaw(-box.yaw),
        score=score,
    )


def _boxes(records, categories, unknown, source):
    boxes, dont_care, skipped = [], [], 0
    for rec in records:
        if rec.type == DONT_CARE:
            dont_care.append(rec.bbox_2d)
            continue
        if rec.type not in categories:
            if unknown == "error":
                raise KittiParseError(f"unknown category {rec.type!r}", source=source, field="type")
            log.warning("%s: skipping unknown category %r", source or "<input>", rec.type)
            skipped += 1
            continue
        boxes.append(record_to_box(rec, categories[rec.type]))
    return boxes, dont_care, skipped


def parse_frame(label_text: str | None, detection_text: str | None, frame_id: str = "",
                categories: dict | None = None, unknown: str = "skip") -> Frame:
    """Build a frame from label (ground truth) and detection text.

    ``label_text=None`` leaves ``ground_truth`` unset. DontCare records never
    become boxes; their 2D boxes are kept on the frame for evaluation.
    """
    categories = DEFAULT_CATEGORIES if categories is None else categories
    dets = parse_records(detection_text, f"{frame_id} detections", require_score=True)
    boxes, dc_det, skipped = _boxes(dets, categories, unknown, f"{frame_id} detections")
    gt, dont_care = None, dc_det
    if label_text is not None:
        labels = parse_records(label_text, f"{frame_id} labels")
        gt, dc_lab, skipped_gt = _boxes(labels, categories, unknown, f"{frame_id} labels")
        dont_care = dc_lab + dc_det
        skipped += skipped_gt
    return Frame(frame_id=frame_id, boxes=boxes, ground_truth=gt, dont_care=dont_care, skipped=skipped)


def read_frames(det_dir, label_dir=None, categories=None, unknown="skip") -> list:
    """Frames for every ``*.txt`` in ``det_dir``, sorted by frame id."""
    det_dir = Path(det_dir)
    frames = []
    for path in sorted(det_dir.glob("*.txt")):
        label_text = None
        if label_dir is not None:
            lp = Path(label_dir) / path.name
            label_text = lp.read_text() if lp.exists() else ""
        frames.append(parse_frame(label_text, path.read_text(), path.stem, categories, unknown))
    return frames


def format_detections(frame: Frame, result, label_names: dict) -> str:
    lines = []
    for idx, score in result.kept:
        box = frame.boxes[idx]
        lines.append(box_to_record(box, label_names.get(box.label, str(box.label)), score).to_line())
    return "".join(line + "\n" for line in lines)


COLUMNS = ("frame_id", "index", "type", "cx", "cy", "cz", "dx", "dy", "dz", "yaw", "score",
           "output_score", "status", "suppressed_by", "cluster_id", "density", "volume", "v_o",
           "category", "degenerate")


def box_rows(frame: Frame, result, label_names: dict, analysis=None) -> list:
    status = {}
    out_score = {}
    by = {}
    for i, s in result.kept:
        status[i] = "kept"
        out_score[i] = s
    for j, i in result.suppressed:
        status[j] = "suppressed"
        by[j] = i
    for i in result.filtered:
        status[i] = "filtered"
    rows = []
    for k, box in enumerate(frame.boxes):
        row = {
            "frame_id": frame.frame_id, "index": k,
            "type": label_names.get(box.label, str(box.label)),
            "cx": box.cx, "cy": box.cy, "cz": box.cz, "dx": box.dx, "dy": box.dy, "dz": box.dz,
            "yaw": box.yaw, "score": box.score,
            "output_score": out_score.get(k),
            "status": status.get(k, "filtered"),
            "suppressed_by": by.get(k),
            "cluster_id": None, "density": None, "volume": box.dx * box.dy * box.dz,
            "v_o": None, "category": None, "degenerate": None,
        }
        if analysis is not None and analysis.get(k) is not None:
            row.update(analysis[k])
        rows.append(row)
    return rows


def write_results(frames, results, out_dir, fmt: str = "kitti", label_names: dict | None = None,
                  analyses=None, meta: dict | None = None) -> list:
    """Write one file per frame; returns the written paths.

    ``analyses`` optionally holds, per frame, a mapping box index -> dict of
    fuzzy diagnostics (cluster_id, density, volume, v_o, category,
    degenerate) merged into json/csv rows.
    """
    if fmt not in ("kitti", "json", "csv"):
        raise ValueError(f"unknown format {fmt!r}; expected kitti, json or csv")
    if len(frames) != len(results):
        raise ValueError(f"{len(frames)} frames but {len(results)} results")
    label_names = label_names or {v: k for k, v in DEFAULT_CATEGORIES.items()}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    analyses = analyses or [None] * len(frames)
    paths = []
    for frame, result, analysis in zip(frames, results, analyses):
        if fmt == "kitti":
            path = out_dir / f"{frame.frame_id}.txt"
            path.write_text(format_detections(frame, result, label_names))
        elif fmt == "json":
            path = out_dir / f"{frame.frame_id}.json"
            doc = {"frame_id": frame.frame_id, "meta": {**(meta or {}), **result.meta},
                   "counts": result.counts,
                   "boxes": box_rows(frame, result, label_names, analysis)}
            path.write_text(json.dumps(doc, indent=1, default=_jsonable) + "\n")
        else:
            path = out_dir / f"{frame.frame_id}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=COLUMNS)
                writer.writeheader()
                for row in box_rows(frame, result, label_names, analysis):
                    writer.writerow({k: "" if v is None else v for k, v in row.items()})
        paths.append(path)
    return paths


def _jsonable(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"not JSON serialisable: {obj!r}")
