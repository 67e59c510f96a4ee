"""DBSCAN over box centres and per-cluster box density."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Frame, boxes_to_array

NOISE = 0


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.3
    min_pts: int = 4

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps!r}")
        if int(self.min_pts) != self.min_pts or self.min_pts < 1:
            raise ValueError(f"min_pts must be an integer >= 1, got {self.min_pts!r}")


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_id: np.ndarray  # int, 0 = noise, 1..K clusters
    density: np.ndarray  # float in (0, 1]

    def __len__(self):
        return len(self.cluster_id)


def _grid_neighbors(points: np.ndarray, eps: float):
    """Neighbour lists (self inclusive) via a hash grid of cell size ``eps``.

    Returns CSR ``(indptr, indices)``; each point's neighbours are sorted by
    input index.
    """
    n = len(points)
    cells = np.floor(points / eps).astype(np.int64)
    lo = cells.min(axis=0) - 1
    dims = cells.max(axis=0) - lo + 2
    if float(np.prod(dims.astype(float))) > 2.0**62:
        return _brute_neighbors(points, eps)
    rel = cells - lo
    stride = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    keys = rel @ stride
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]

    src, dst = [], []
    # keys of z-adjacent cells are consecutive, so each (ox, oy) column is
    # one contiguous key range
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            base = keys + (ox * stride[0] + oy * stride[1])
            left = np.searchsorted(sorted_keys, base - 1, side="left")
            right = np.searchsorted(sorted_keys, base + 1, side="right")
            cnt = right - left
            total = int(cnt.sum())
            if total == 0:
                continue
            owner = np.repeat(np.arange(n), cnt)
            offset = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            src.append(owner)
            dst.append(order[np.repeat(left, cnt) + offset])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    diff = points[src] - points[dst]
    close = np.einsum("ij,ij->i", diff, diff) <= eps * eps
    src, dst = src[close], dst[close]
    perm = np.lexsort((dst, src))
    src, dst = src[perm], dst[perm]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst


def _brute_neighbors(points: np.ndarray, eps: float):
    diff = points[:, None, :] - points[None, :, :]
    adj = np.einsum("ijk,ijk->ij", diff, diff) <= eps * eps
    src, dst = np.nonzero(adj)
    indptr = np.zeros(len(points) + 1, dtype=np.int64)
    np.cumsum(adj.sum(axis=1), out=indptr[1:])
    return indptr, dst


def dbscan(centers, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Cluster ids per point: 0 for noise, 1..K in order of discovery.

    Points are visited in input order; a border point reachable from two
    clusters joins the one discovered first.
    """
    pts = np.asarray(centers, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.zeros(n, dtype=np.int64)
    if n == 0:
        return labels
    if not np.all(np.isfinite(pts)):
        raise ValueError("centers must be finite")
    indptr, indices = _grid_neighbors(pts, params.eps)
    nbrs = [indices[indptr[i]:indptr[i + 1]].tolist() for i in range(n)]
    core = [len(nb) >= params.min_pts for nb in nbrs]

    # Clusters are grown one at a time, so labelling a point when it is first
    # reached gives border points to the earliest-discovered cluster.
    out = [NOISE] * n
    cluster = 0
    for p in range(n):
        if out[p] != NOISE or not core[p]:
            continue
        cluster += 1
        out[p] = cluster
        stack = [p]
        while stack:
            q = stack.pop()
            for r in nbrs[q]:
                if out[r] == NOISE:
                    out[r] = cluster
                    if core[r]:
                        stack.append(r)
    labels[:] = out
    return labels


def cluster_density(ids) -> np.ndarray:
    """Per-box density: member count of its cluster over the largest count.

    Noise (id 0) is treated as one more cluster, so it also enters the max.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros(0)
    counts = np.bincount(ids)
    return counts[ids] / counts.max()


def estimate(frame: Frame, params: DbscanParams = DbscanParams()) -> ClusterAssignment:
    arr = boxes_to_array(frame.boxes)
    ids = dbscan(arr[:, :3], params)
    return ClusterAssignment(cluster_id=ids, density=cluster_density(ids))
