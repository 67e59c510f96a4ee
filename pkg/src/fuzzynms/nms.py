"""Greedy suppression: Fuzzy-NMS and the traditional, Soft and DIoU baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .fuzzy import BoxCategory, Category
from .geometry import (
    IOU_MODES,
    Frame,
    boxes_to_array,
    candidate_pairs,
    center_penalty_pairs,
    iou_indexed,
)

CATEGORIES = (Category.LD, Category.SVHD, Category.LVHD)

DEFAULT_IOU_THRESHOLD = {Category.LD: 0.01, Category.LVHD: 0.6, Category.SVHD: 0.0}
DEFAULT_SCORE_THRESHOLD = {Category.LD: 0.1, Category.LVHD: 0.1, Category.SVHD: 0.3}


def _as_category(value) -> Category:
    if isinstance(value, BoxCategory):
        return value.category
    return Category(value)


def _check_unit(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ValueError(f"{name} must be in [0, 1], got {value!r}")


@dataclass(frozen=True)
class NmsConfig:
    iou_threshold: Mapping = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLD))
    score_threshold: Mapping = field(default_factory=lambda: dict(DEFAULT_SCORE_THRESHOLD))
    iou_mode: str = "bev"
    pre_filter_score: float | None = None

    def __post_init__(self):
        iou_t = {_as_category(k): float(v) for k, v in self.iou_threshold.items()}
        score_t = {_as_category(k): float(v) for k, v in self.score_threshold.items()}
        for table, name in ((iou_t, "iou_threshold"), (score_t, "score_threshold")):
            missing = [c.value for c in CATEGORIES if c not in table]
            if missing:
                raise ValueError(f"{name} missing categories {missing}")
            for c, v in table.items():
                _check_unit(f"{name}[{c.value}]", v)
        if self.iou_mode not in IOU_MODES:
            raise ValueError(f"iou_mode must be one of {IOU_MODES}, got {self.iou_mode!r}")
        if self.pre_filter_score is not None:
            _check_unit("pre_filter_score", self.pre_filter_score)
        object.__setattr__(self, "iou_threshold", iou_t)
        object.__setattr__(self, "score_threshold", score_t)

    @classmethod
    def unified(cls, iou: float, score: float, **kwargs) -> "NmsConfig":
        return cls({c: iou for c in CATEGORIES}, {c: score for c in CATEGORIES}, **kwargs)

    def with_overrides(self, iou=None, score=None, **kwargs) -> "NmsConfig":
        iou_t = dict(self.iou_threshold)
        iou_t.update({_as_category(k): v for k, v in (iou or {}).items()})
        score_t = dict(self.score_threshold)
        score_t.update({_as_category(k): v for k, v in (score or {}).items()})
        opts = {"iou_mode": self.iou_mode, "pre_filter_score": self.pre_filter_score}
        opts.update(kwargs)
        return NmsConfig(iou_t, score_t, **opts)


@dataclass
class NmsResult:
    kept: list  # (box index, score) in non-increasing score order
    suppressed: list  # (box index, suppressor index)
    filtered: list = field(default_factory=list)  # box indices removed by a score filter
    counts: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def kept_indices(self) -> list:
        return [i for i, _ in self.kept]

    @property
    def n_input(self) -> int:
        return len(self.kept) + len(self.suppressed) + len(self.filtered)


def _order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties by ascending index."""
    return np.lexsort((np.arange(len(scores)), -scores))


def _sorted_kept(indices, scores) -> list:
    pairs = [(int(i), float(scores[i])) for i in indices]
    pairs.sort(key=lambda p: (-p[1], p[0]))
    return pairs


def _pairs(arr, mode, groups=None, with_diou=False):
    """Same-group candidate pairs ``(i, j, iou, diou)`` with ``i < j``."""
    i, j = candidate_pairs(arr, mode)
    if groups is not None and len(i):
        same = groups[i] == groups[j]
        i, j = i[same], j[same]
    vals = iou_indexed(arr, i, j, mode)
    dvals = vals - center_penalty_pairs(arr[i], arr[j], mode) if with_diou and len(i) else None
    return i, j, vals, dvals


def _pair_matrices(arr, mode, groups=None, with_diou=False):
    """Dense IoU (and optionally DIoU) matrices over same-group candidate pairs."""
    n = len(arr)
    i, j, vals, dvals = _pairs(arr, mode, groups, with_diou)
    iou = np.zeros((n, n))
    iou[i, j] = vals
    iou[j, i] = vals
    diou = None
    if with_diou:
        diou = np.full((n, n), -np.inf)
        if dvals is not None:
            diou[i, j] = dvals
            diou[j, i] = dvals
    return iou, diou


def _greedy(scores, pairs, thresholds):
    """Core loop: keep the best remaining box, drop the boxes it overlaps.

    ``pairs`` is ``(i, j, iou, criterion)`` over the pairs allowed to
    interact. A box is suppressed when ``criterion >= threshold`` of the
    selecting box and the footprints actually intersect (IoU > 0).
    """
    n = len(scores)
    i, j, iou, crit = pairs
    touch = iou > 0
    fwd = touch & (crit >= thresholds[i])  # i suppresses j
    bwd = touch & (crit >= thresholds[j])  # j suppresses i
    sup = np.concatenate([i[fwd], j[bwd]])
    tgt = np.concatenate([j[fwd], i[bwd]])
    perm = np.lexsort((tgt, sup))
    sup, tgt = sup[perm], tgt[perm]
    bounds = np.searchsorted(sup, np.arange(n + 1)).tolist()
    tgt = tgt.tolist()

    alive = [True] * n
    kept, suppressed = [], []
    for b in _order(scores).tolist():
        if not alive[b]:
            continue
        alive[b] = False
        kept.append(b)
        for t in tgt[bounds[b]:bounds[b + 1]]:
            if alive[t]:
                alive[t] = False
                suppressed.append((t, b))
    return kept, suppressed


def _prepare(boxes, scores):
    if isinstance(boxes, Frame):
        boxes = boxes.boxes
    arr = boxes_to_array(boxes)
    if scores is None:
        if isinstance(boxes, np.ndarray):
            raise ValueError("scores are required when boxes are given as an array")
        scores = np.array([b.score for b in boxes], dtype=float)
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if len(scores) != len(arr):
        raise ValueError(f"{len(arr)} boxes but {len(scores)} scores")
    return arr, scores


def _labels(boxes, per_label, labels):
    if not per_label:
        return None
    if labels is None:
        labels = [b.label for b in (boxes.boxes if isinstance(boxes, Frame) else boxes)]
    return np.asarray(labels)


def _post_filter(kept, scores, score_threshold):
    if score_threshold is None:
        return kept, []
    keep = [i for i in kept if scores[i] >= score_threshold]
    drop = [i for i in kept if scores[i] < score_threshold]
    return keep, drop


def traditional_nms(boxes, scores=None, iou_thresh: float = 0.5, iou_mode: str = "bev", *,
                    score_threshold: float | None = None, per_label: bool = False,
                    labels=None) -> NmsResult:
    """Greedy NMS with one IoU threshold, optionally followed by a score cut."""
    arr, scores = _prepare(boxes, scores)
    _check_unit("iou_thresh", iou_thresh)
    groups = _labels(boxes, per_label, labels)
    i, j, vals, _ = _pairs(arr, iou_mode, groups)
    kept, suppressed = _greedy(scores, (i, j, vals, vals), np.full(len(arr), iou_thresh))
    kept, filtered = _post_filter(kept, scores, score_threshold)
    return NmsResult(
        kept=_sorted_kept(kept, scores),
        suppressed=suppressed,
        filtered=sorted(filtered),
        counts={"all": {"input": len(arr), "kept": len(kept), "suppressed": len(suppressed),
                        "filtered": len(filtered)}},
        meta={"variant": "traditional", "iou_mode": iou_mode, "iou_threshold": iou_thresh,
              "score_threshold": score_threshold, "per_label": per_label},
    )


def diou_nms(boxes, scores=None, iou_thresh: float = 0.5, iou_mode: str = "bev", *,
             score_threshold: float | None = None, per_label: bool = False,
             labels=None) -> NmsResult:
    """Greedy NMS suppressing on IoU minus the normalised centre-distance penalty."""
    arr, scores = _prepare(boxes, scores)
    _check_unit("iou_thresh", iou_thresh)
    groups = _labels(boxes, per_label, labels)
    i, j, vals, dvals = _pairs(arr, iou_mode, groups, with_diou=True)
    if dvals is None:
        dvals = vals
    kept, suppressed = _greedy(scores, (i, j, vals, dvals), np.full(len(arr), iou_thresh))
    kept, filtered = _post_filter(kept, scores, score_threshold)
    return NmsResult(
        kept=_sorted_kept(kept, scores),
        suppressed=suppressed,
        filtered=sorted(filtered),
        counts={"all": {"input": len(arr), "kept": len(kept), "suppressed": len(suppressed),
                        "filtered": len(filtered)}},
        meta={"variant": "diou", "iou_mode": iou_mode, "iou_threshold": iou_thresh,
              "score_threshold": score_threshold, "per_label": per_label},
    )


def soft_nms(boxes, scores=None, sigma: float = 0.5, final_score_thresh: float = 0.001,
             iou_mode: str = "bev", *, method: str = "gaussian", iou_thresh: float = 0.3,
             per_label: bool = False, labels=None) -> NmsResult:
    """Soft-NMS: decay overlapping scores instead of removing boxes.

    Gaussian decay multiplies by ``exp(-iou**2 / sigma)``; linear decay by
    ``1 - iou`` once ``iou >= iou_thresh``. Boxes whose decayed score falls
    below ``final_score_thresh`` are dropped. Kept scores are the decayed ones.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma!r}")
    if method not in ("gaussian", "linear"):
        raise ValueError(f"method must be 'gaussian' or 'linear', got {method!r}")
    arr, scores = _prepare(boxes, scores)
    groups = _labels(boxes, per_label, labels)
    iou, _ = _pair_matrices(arr, iou_mode, groups)
    n = len(arr)
    s = scores.copy()
    alive = s >= final_score_thresh
    filtered = np.flatnonzero(~alive).tolist()
    kept, suppressed = [], []
    idx = np.arange(n)
    while alive.any():
        cand = np.flatnonzero(alive)
        best = cand[np.lexsort((idx[cand], -s[cand]))[0]]
        alive[best] = False
        kept.append(int(best))
        row = iou[best]
        touch = alive & (row > 0)
        if method == "gaussian":
            s[touch] = s[touch] * np.exp(-(row[touch] ** 2) / sigma)
        else:
            touch &= row >= iou_thresh
            s[touch] = s[touch] * (1.0 - row[touch])
        dropped = np.flatnonzero(touch & (s < final_score_thresh))
        if dropped.size:
            alive[dropped] = False
            suppressed.extend((int(j), int(best)) for j in dropped)
    return NmsResult(
        kept=_sorted_kept(kept, s),
        suppressed=suppressed,
        filtered=filtered,
        counts={"all": {"input": n, "kept": len(kept), "suppressed": len(suppressed),
                        "filtered": len(filtered)}},
        meta={"variant": "soft", "iou_mode": iou_mode, "sigma": sigma, "method": method,
              "final_score_thresh": final_score_thresh, "per_label": per_label,
              "scores": "decayed"},
    )


def fuzzy_nms(frame: Frame, categories: Sequence, config: NmsConfig = None,
              scores=None) -> NmsResult:
    """Per-category greedy suppression followed by per-category score filtering.

    ``frame`` is a :class:`Frame`, a list of boxes or an ``(N, 7)`` array (then
    ``scores`` is required). ``categories`` holds one :class:`BoxCategory` (or
    category name) per box. Boxes are only ever suppressed by boxes of their
    own category.
    """
    config = config or NmsConfig()
    boxes = frame.boxes if isinstance(frame, Frame) else frame
    arr, scores = _prepare(boxes, scores)
    if len(categories) != len(arr):
        raise ValueError(f"{len(categories)} categories for {len(arr)} boxes")
    cats = [_as_category(c) for c in categories]
    code = {c: k for k, c in enumerate(CATEGORIES)}
    groups = np.array([code[c] for c in cats], dtype=np.intp)
    iou_t = np.array([config.iou_threshold[c] for c in cats])
    score_t = np.array([config.score_threshold[c] for c in cats])

    i, j, vals, _ = _pairs(arr, config.iou_mode, groups)
    kept, suppressed = _greedy(scores, (i, j, vals, vals), iou_t)
    passed = scores[kept] >= score_t[kept] if kept else np.zeros(0, dtype=bool)
    keep = [k for k, ok in zip(kept, passed) if ok]
    filtered = [k for k, ok in zip(kept, passed) if not ok]

    def per_group(idx):
        return np.bincount(groups[np.asarray(idx, dtype=int)], minlength=len(CATEGORIES))

    n_in, n_kept = per_group(range(len(arr))), per_group(keep)
    n_sup, n_filt = per_group([t for t, _ in suppressed]), per_group(filtered)
    counts = {}
    for c in CATEGORIES:
        k = code[c]
        counts[c.value] = {"input": int(n_in[k]), "kept": int(n_kept[k]),
                           "suppressed": int(n_sup[k]), "filtered": int(n_filt[k])}
    return NmsResult(
        kept=_sorted_kept(keep, scores),
        suppressed=suppressed,
        filtered=sorted(filtered),
        counts=counts,
        meta={"variant": "fuzzy", "iou_mode": config.iou_mode,
              "iou_threshold": {c.value: v for c, v in config.iou_threshold.items()},
              "score_threshold": {c.value: v for c, v in config.score_threshold.items()}},
    )
