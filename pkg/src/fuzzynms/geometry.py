"""Oriented 3D boxes, footprints and IoU kernels.

Boxes live in a z-up frame: ``(cx, cy)`` is the ground plane, ``cz`` the
vertical centre, ``dz`` the height and ``yaw`` a rotation about +z. Every
suppression variant goes through :func:`pairwise_iou`, which evaluates only
pairs whose circumscribed circles touch and measures footprint overlap with
a batched boundary integral. :func:`iou_bev` / :func:`iou_3d` are the scalar
routes (Sutherland-Hodgman clipping plus shoelace area) and double as a
second implementation for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Clipping predicate tolerance, in metres.
CLIP_TOL = 1e-9
# Intersections below this area (m^2) count as no overlap.
MIN_AREA = 1e-12

IOU_MODES = ("bev", "3d")


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into [-pi, pi]."""
    return math.remainder(yaw, 2.0 * math.pi)


@dataclass(frozen=True)
class Box3D:
    """Oriented box with class label and confidence.

    ``truncated``, ``occluded``, ``alpha`` and ``bbox_2d`` carry the KITTI
    columns that do not take part in geometry so detections survive a
    parse/write round trip.
    """

    cx: float
    cy: float
    cz: float
    dx: float
    dy: float
    dz: float
    yaw: float = 0.0
    label: int = 0
    score: float = 1.0
    truncated: float = 0.0
    occluded: int = 0
    alpha: float = 0.0
    bbox_2d: tuple = field(default=(0.0, 0.0, 0.0, 0.0))

    def __post_init__(self):
        for name in ("cx", "cy", "cz", "dx", "dy", "dz", "yaw", "score"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        for name in ("dx", "dy", "dz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score!r}")
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label!r}")
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))
        object.__setattr__(self, "bbox_2d", tuple(float(v) for v in self.bbox_2d))

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw])


@dataclass
class Frame:
    """Candidate boxes of one point-cloud frame, in input order."""

    frame_id: str
    boxes: list = field(default_factory=list)
    ground_truth: list | None = None
    # 2D image boxes of DontCare regions, used only by evaluation.
    dont_care: list = field(default_factory=list)
    # Records dropped because their category was not in the name mapping.
    skipped: int = 0

    @property
    def scores(self) -> np.ndarray:
        return np.array([b.score for b in self.boxes], dtype=float)

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.boxes], dtype=int)

    def array(self) -> np.ndarray:
        return boxes_to_array(self.boxes)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an ``(N, 7)`` array ``[cx, cy, cz, dx, dy, dz, yaw]``.

    Arrays pass through (as float64); sequences of :class:`Box3D` are packed.
    """
    if isinstance(boxes, np.ndarray):
        arr = np.asarray(boxes, dtype=float)
        if arr.size == 0:
            return np.zeros((0, 7))
        if arr.ndim != 2 or arr.shape[1] != 7:
            raise ValueError(f"expected (N, 7) box array, got shape {arr.shape}")
        return arr
    rows = [(b.cx, b.cy, b.cz, b.dx, b.dy, b.dz, b.yaw) for b in boxes]
    if not rows:
        return np.zeros((0, 7))
    return np.array(rows, dtype=float)


def volume(box: Box3D) -> float:
    return box.dx * box.dy * box.dz


def volumes(boxes) -> np.ndarray:
    arr = boxes_to_array(boxes)
    return arr[:, 3] * arr[:, 4] * arr[:, 5]


# local footprint corners, counter-clockwise
_UNIT_CORNERS = np.array([[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]])


def bev_corners(box: Box3D) -> np.ndarray:
    """Footprint corners ``(4, 2)`` in counter-clockwise order."""
    return _corners(np.asarray([box.as_array()]))[0]


def _corners(arr: np.ndarray) -> np.ndarray:
    c = np.cos(arr[:, 6])[:, None]
    s = np.sin(arr[:, 6])[:, None]
    lx = _UNIT_CORNERS[None, :, 0] * arr[:, 3:4]
    ly = _UNIT_CORNERS[None, :, 1] * arr[:, 4:5]
    x = arr[:, 0:1] + c * lx - s * ly
    y = arr[:, 1:2] + s * lx + c * ly
    return np.stack([x, y], axis=-1)


# ---------------------------------------------------------------------------
# scalar route


def _clip_polygon(subject: list, clip: Sequence) -> list:
    """Sutherland-Hodgman: clip ``subject`` by the convex CCW polygon ``clip``."""
    output = list(subject)
    n = len(clip)
    for k in range(n):
        if not output:
            break
        x1, y1 = clip[k]
        x2, y2 = clip[(k + 1) % n]
        ex, ey = x2 - x1, y2 - y1
        norm = math.hypot(ex, ey)

        def dist(p):
            return (ex * (p[1] - y1) - ey * (p[0] - x1)) / norm

        inp = output
        output = []
        for i, cur in enumerate(inp):
            nxt = inp[(i + 1) % len(inp)]
            dc, dn = dist(cur), dist(nxt)
            cur_in, nxt_in = dc >= -CLIP_TOL, dn >= -CLIP_TOL
            if cur_in:
                output.append(cur)
            if cur_in != nxt_in:
                t = dc / (dc - dn)
                output.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return output


def _shoelace(poly: Sequence) -> float:
    acc = 0.0
    for i, (x1, y1) in enumerate(poly):
        x2, y2 = poly[(i + 1) % len(poly)]
        acc += x1 * y2 - x2 * y1
    return 0.5 * abs(acc)


def _canonical(a: Box3D, b: Box3D):
    ka, kb = tuple(a.as_array()), tuple(b.as_array())
    return (a, b) if ka <= kb else (b, a)


def bev_intersection(a: Box3D, b: Box3D) -> float:
    a, b = _canonical(a, b)
    poly = _clip_polygon([tuple(p) for p in bev_corners(a)], [tuple(p) for p in bev_corners(b)])
    if len(poly) < 3:
        return 0.0
    area = _shoelace(poly)
    return area if area >= MIN_AREA else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    a, b = _canonical(a, b)
    inter = bev_intersection(a, b)
    if inter == 0.0:
        return 0.0
    union = a.dx * a.dy + b.dx * b.dy - inter
    return min(1.0, max(0.0, inter / union))


def iou_3d(a: Box3D, b: Box3D) -> float:
    a, b = _canonical(a, b)
    h = min(a.cz + a.dz / 2, b.cz + b.dz / 2) - max(a.cz - a.dz / 2, b.cz - b.dz / 2)
    if h <= 0:
        return 0.0
    inter = bev_intersection(a, b) * h
    if inter == 0.0:
        return 0.0
    union = volume(a) + volume(b) - inter
    return min(1.0, max(0.0, inter / union))


def iou(a: Box3D, b: Box3D, mode: str = "bev") -> float:
    if mode == "bev":
        return iou_bev(a, b)
    if mode == "3d":
        return iou_3d(a, b)
    raise ValueError(f"unknown iou mode {mode!r}; expected one of {IOU_MODES}")


# ---------------------------------------------------------------------------
# batched route

_NEXT = np.array([1, 2, 3, 0, 5, 6, 7, 4])
_OWN = np.array([True] * 4 + [False] * 4)[:, None]
_UX = _UNIT_CORNERS[:, 0:1]
_UY = _UNIT_CORNERS[:, 1:2]
_VX = np.roll(_UX, -1, axis=0) - _UX  # unit edge vectors
_VY = np.roll(_UY, -1, axis=0) - _UY


def _overlap_area(first: np.ndarray, second: np.ndarray, cs_first, cs_second) -> np.ndarray:
    """Footprint intersection areas by boundary integration.

    ``cs_first`` and ``cs_second`` are the ``(cos, sin)`` of each row's yaw.
    The intersection boundary consists of the edges of each footprint
    clipped to the other one. Rows 0-3 of the working arrays hold the edges
    of ``first``, rows 4-7 those of ``second``. Each edge is clipped against
    the other box's four sides in that box's local frame, with the same
    tolerance and crossing parameter as the scalar route, and contributes
    ``cross(start, end) / 2`` (Green's theorem) in the local frame of
    ``first``. An edge lying on a side of the other box counts only for
    ``first`` and only when both run the same way, so a shared boundary is
    counted once.
    """
    (c1, s1), (c2, s2) = cs_first, cs_second
    # relative rotation first -> second and each centre in the other's frame
    cr, sr = c1 * c2 + s1 * s2, s1 * c2 - c1 * s2
    dx, dy = first[:, 0] - second[:, 0], first[:, 1] - second[:, 1]
    o1x, o1y = c2 * dx + s2 * dy, c2 * dy - s2 * dx  # first's centre seen from second
    o2x, o2y = -(c1 * dx + s1 * dy), -(c1 * dy - s1 * dx)  # second's centre seen from first
    ax, ay = _UX * first[:, 3], _UY * first[:, 4]
    avx, avy = _VX * first[:, 3], _VY * first[:, 4]
    bx, by = _UX * second[:, 3], _UY * second[:, 4]
    bvx, bvy = _VX * second[:, 3], _VY * second[:, 4]

    # shared (first's) frame: first is axis-aligned, second rotated by -rel
    b_x, b_y = o2x + cr * bx + sr * by, o2y + cr * by - sr * bx
    x = np.concatenate([ax, b_x])
    y = np.concatenate([ay, b_y])
    vx = np.concatenate([avx, cr * bvx + sr * bvy])
    vy = np.concatenate([avy, cr * bvy - sr * bvx])
    # clipping frame: rows 0-3 in second's frame, rows 4-7 in first's
    lx = np.concatenate([o1x + cr * ax - sr * ay, b_x])
    ly = np.concatenate([o1y + sr * ax + cr * ay, b_y])
    lvx = np.concatenate([cr * avx - sr * avy, vx[4:]])
    lvy = np.concatenate([sr * avx + cr * avy, vy[4:]])
    k = len(first)
    hx = np.concatenate([np.broadcast_to(second[:, 3] / 2, (4, k)), np.broadcast_to(first[:, 3] / 2, (4, k))])
    hy = np.concatenate([np.broadcast_to(second[:, 4] / 2, (4, k)), np.broadcast_to(first[:, 4] / 2, (4, k))])

    t0 = np.zeros((8, k))
    t1 = np.ones((8, k))
    t = np.zeros((8, k))
    dead = np.zeros((8, k), dtype=bool)
    # sides in CCW order: x = +hx (runs +y), y = +hy (-x), x = -hx (-y), y = -hy (+x)
    for d0, same in ((hx - lx, lvy > 0), (hy - ly, lvx < 0), (lx + hx, lvy < 0), (ly + hy, lvx > 0)):
        d1 = d0[_NEXT]
        out0 = d0 < -CLIP_TOL
        out1 = out0[_NEXT]
        near = np.abs(d0) <= CLIP_TOL
        dead |= (near & near[_NEXT] & ~(_OWN & same)) | (out0 & out1)
        enter = out0 & ~out1
        leave = out1 & ~out0
        cross = enter | leave
        np.divide(d0, d0 - d1, out=t, where=cross)
        np.maximum(t0, t, out=t0, where=enter)
        np.minimum(t1, t, out=t1, where=leave)
    alive = ~dead & (t1 > t0)
    sx, sy = x + t0 * vx, y + t0 * vy
    ex, ey = x + t1 * vx, y + t1 * vy
    return 0.5 * np.where(alive, sx * ey - ex * sy, 0.0).sum(axis=0)


def _canonical_swap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mask of rows where ``b`` sorts lexicographically before ``a``."""
    swap = np.zeros(len(a), dtype=bool)
    decided = np.zeros(len(a), dtype=bool)
    for col in range(a.shape[1]):
        lt = b[:, col] < a[:, col]
        gt = b[:, col] > a[:, col]
        swap |= ~decided & lt
        decided |= lt | gt
    return swap


def _lex_rank(arr: np.ndarray) -> np.ndarray:
    """Rank of each row in lexicographic order (identical rows tie arbitrarily)."""
    order = np.lexsort(arr.T[::-1])
    rank = np.empty(len(arr), dtype=np.intp)
    rank[order] = np.arange(len(arr))
    return rank


def _intersection_indexed(arr: np.ndarray, i: np.ndarray, j: np.ndarray, rank=None) -> np.ndarray:
    """Footprint intersection of boxes ``arr[i]`` and ``arr[j]``, pairwise.

    Trigonometry is evaluated once per box. Each pair is put in canonical
    (lexicographic) order first, which makes the result exactly symmetric.
    """
    if len(i) == 0:
        return np.zeros(0)
    rank = _lex_rank(arr) if rank is None else rank
    swap = rank[j] < rank[i]
    fi, si = np.where(swap, j, i), np.where(swap, i, j)
    c, s = np.cos(arr[:, 6]), np.sin(arr[:, 6])
    area = _overlap_area(arr[fi], arr[si], (c[fi], s[fi]), (c[si], s[si]))
    area[area < MIN_AREA] = 0.0
    return area


def _iou_from_intersection(a: np.ndarray, b: np.ndarray, inter: np.ndarray, mode: str) -> np.ndarray:
    area_a = a[:, 3] * a[:, 4]
    area_b = b[:, 3] * b[:, 4]
    if mode == "3d":
        top = np.minimum(a[:, 2] + a[:, 5] / 2, b[:, 2] + b[:, 5] / 2)
        bot = np.maximum(a[:, 2] - a[:, 5] / 2, b[:, 2] - b[:, 5] / 2)
        inter = inter * np.maximum(top - bot, 0.0)
        area_a = area_a * a[:, 5]
        area_b = area_b * b[:, 5]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inter > 0, inter / (area_a + area_b - inter), 0.0)
    return np.clip(out, 0.0, 1.0)


def bev_intersection_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Footprint intersection areas for row-aligned box arrays."""
    a = boxes_to_array(a)
    b = boxes_to_array(b)
    if len(a) != len(b):
        raise ValueError(f"row counts differ: {len(a)} vs {len(b)}")
    k = len(a)
    idx = np.arange(k)
    both = np.concatenate([a, b])
    rank = np.concatenate([np.zeros(k, dtype=np.intp), np.where(_canonical_swap(a, b), -1, 1)])
    return _intersection_indexed(both, idx, idx + k, rank)


def iou_pairs(a: np.ndarray, b: np.ndarray, mode: str = "bev") -> np.ndarray:
    """IoU of row-aligned box arrays ``a[i]`` vs ``b[i]``."""
    if mode not in IOU_MODES:
        raise ValueError(f"unknown iou mode {mode!r}; expected one of {IOU_MODES}")
    a = boxes_to_array(a)
    b = boxes_to_array(b)
    return _iou_from_intersection(a, b, bev_intersection_pairs(a, b), mode)


def iou_indexed(boxes, i, j, mode: str = "bev") -> np.ndarray:
    """IoU of ``boxes[i[k]]`` vs ``boxes[j[k]]``; same values as :func:`iou_pairs`."""
    if mode not in IOU_MODES:
        raise ValueError(f"unknown iou mode {mode!r}; expected one of {IOU_MODES}")
    arr = boxes_to_array(boxes)
    i = np.asarray(i, dtype=np.intp)
    j = np.asarray(j, dtype=np.intp)
    return _iou_from_intersection(arr[i], arr[j], _intersection_indexed(arr, i, j), mode)


def candidate_pairs(boxes, mode: str = "bev"):
    """Index pairs ``(i, j)``, ``i < j``, whose bounding circles meet.

    Every pair with non-zero IoU is included; most disjoint pairs are not.
    """
    arr = boxes_to_array(boxes)
    n = len(arr)
    if n < 2:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty
    radius = 0.5 * np.hypot(arr[:, 3], arr[:, 4])
    # sweep along x: only boxes within the largest possible reach are tested
    order = np.argsort(arr[:, 0], kind="stable")
    xs = arr[order, 0]
    hi = np.searchsorted(xs, xs + radius[order] + radius.max() + CLIP_TOL, side="right")
    cnt = hi - np.arange(1, n + 1)
    first = np.repeat(np.arange(n), cnt)
    offset = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    a, b = order[first], order[first + 1 + offset]
    i, j = np.minimum(a, b), np.maximum(a, b)
    dx = arr[i, 0] - arr[j, 0]
    dy = arr[i, 1] - arr[j, 1]
    reach = radius[i] + radius[j] + CLIP_TOL
    near = dx * dx + dy * dy <= reach * reach
    if mode == "3d":
        near &= np.abs(arr[i, 2] - arr[j, 2]) < (arr[i, 5] + arr[j, 5]) / 2
    i, j = i[near], j[near]
    perm = np.lexsort((j, i))
    i, j = i[perm], j[perm]
    return i, j


def pairwise_iou(boxes, mode: str = "bev") -> np.ndarray:
    """Dense symmetric ``(N, N)`` IoU matrix with ones on the diagonal."""
    arr = boxes_to_array(boxes)
    n = len(arr)
    mat = np.zeros((n, n))
    i, j = candidate_pairs(arr, mode)
    if len(i):
        vals = iou_indexed(arr, i, j, mode)
        mat[i, j] = vals
        mat[j, i] = vals
    np.fill_diagonal(mat, 1.0)
    return mat


def center_penalty_pairs(a: np.ndarray, b: np.ndarray, mode: str = "bev") -> np.ndarray:
    """DIoU penalty: squared centre distance over squared enclosing diagonal.

    The enclosing region is the axis-aligned hull of both footprints (plus
    the vertical span in 3D mode).
    """
    a = boxes_to_array(a)
    b = boxes_to_array(b)
    ca, cb = _corners(a), _corners(b)
    pts = np.concatenate([ca, cb], axis=1)
    span = pts.max(axis=1) - pts.min(axis=1)
    rho2 = (a[:, 0] - b[:, 0]) ** 2 + (a[:, 1] - b[:, 1]) ** 2
    c2 = span[:, 0] ** 2 + span[:, 1] ** 2
    if mode == "3d":
        top = np.maximum(a[:, 2] + a[:, 5] / 2, b[:, 2] + b[:, 5] / 2)
        bot = np.minimum(a[:, 2] - a[:, 5] / 2, b[:, 2] - b[:, 5] / 2)
        rho2 = rho2 + (a[:, 2] - b[:, 2]) ** 2
        c2 = c2 + (top - bot) ** 2
    return rho2 / c2


def diou(a: Box3D, b: Box3D, mode: str = "bev") -> float:
    pen = center_penalty_pairs(np.asarray([a.as_array()]), np.asarray([b.as_array()]), mode)[0]
    return iou(a, b, mode) - float(pen)


def pairwise_diou(boxes, mode: str = "bev") -> np.ndarray:
    """Dense DIoU matrix. Pairs outside :func:`candidate_pairs` hold ``-inf``.

    Those pairs have zero IoU and a strictly positive penalty, so they can
    never reach a suppression threshold in [0, 1].
    """
    arr = boxes_to_array(boxes)
    n = len(arr)
    mat = np.full((n, n), -np.inf)
    i, j = candidate_pairs(arr, mode)
    if len(i):
        vals = iou_indexed(arr, i, j, mode) - center_penalty_pairs(arr[i], arr[j], mode)
        mat[i, j] = vals
        mat[j, i] = vals
    np.fill_diagonal(mat, 1.0)
    return mat
