import numpy as np
import pytest

import oracles
from fuzzynms.clustering import (
    NOISE,
    DbscanParams,
    _brute_neighbors,
    _grid_neighbors,
    cluster_density,
    dbscan,
    estimate,
)
from fuzzynms.geometry import Box3D, Frame


def blob(center, n, spacing=0.1):
    return [np.asarray(center, dtype=float) + [k * spacing, 0, 0] for k in range(n)]


class TestParams:
    def test_defaults(self):
        p = DbscanParams()
        assert (p.eps, p.min_pts) == (0.3, 4)

    @pytest.mark.parametrize("eps,min_pts", [(0.0, 4), (-1.0, 4), (0.3, 0), (0.3, 2.5)])
    def test_invalid(self, eps, min_pts):
        with pytest.raises(ValueError):
            DbscanParams(eps, min_pts)


class TestDbscan:
    def test_coincident_five(self):
        assert dbscan(np.zeros((5, 3))).tolist() == [1] * 5

    def test_coincident_three_noise(self):
        assert dbscan(np.zeros((3, 3))).tolist() == [NOISE] * 3

    def test_two_groups(self):
        pts = blob([0, 0, 0], 6) + blob([10, 0, 0], 6)
        ids = dbscan(pts)
        assert ids.tolist() == [1] * 6 + [2] * 6
        assert np.array_equal(ids, oracles.dbscan_reference(pts, 0.3, 4))

    def test_empty(self):
        assert dbscan(np.zeros((0, 3))).size == 0

    def test_non_finite(self):
        with pytest.raises(ValueError):
            dbscan([[0, 0, float("nan")]])

    def test_border_goes_to_first_cluster(self):
        # a border point between two cores, reachable from both
        left = blob([-0.13, 0, 0], 4, 0.05)
        right = blob([0.58, 0, 0], 4, 0.05)
        mid = [np.array([0.3, 0.0, 0.0])]
        pts = right + left + mid
        ids = dbscan(pts, DbscanParams(0.3, 4))
        assert ids[-1] == ids[0] == 1
        assert ids[4] == 2

    def test_inclusive_eps(self):
        pts = [[0, 0, 0], [0.25, 0, 0], [0.0, 0.25, 0], [0, 0, 0.25]]
        assert dbscan(pts, DbscanParams(0.25, 4)).tolist() == [1, 1, 1, 1]

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(21)
        for _ in range(150):
            n = int(rng.integers(0, 120))
            pts = rng.uniform(0, float(rng.uniform(0.3, 3.0)), (n, 3))
            ids = dbscan(pts, DbscanParams(0.3, 4))
            assert np.array_equal(ids, oracles.dbscan_reference(pts, 0.3, 4))

    def test_grid_matches_brute(self):
        rng = np.random.default_rng(22)
        for _ in range(30):
            pts = rng.normal(0, 0.5, (int(rng.integers(1, 150)), 3))
            gi, gd = _grid_neighbors(pts, 0.3)
            bi, bd = _brute_neighbors(pts, 0.3)
            assert np.array_equal(gi, bi)
            assert np.array_equal(gd, bd)

    def test_permutation_same_partition(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            pts = rng.uniform(0, 1.5, (int(rng.integers(5, 120)), 3))
            perm = rng.permutation(len(pts))
            a = dbscan(pts)
            b = dbscan(pts[perm])
            back = np.empty_like(b)
            back[perm] = b
            # core membership is order-free; only border tie-breaks may differ
            core_pts = np.array([(np.sum(np.sum((pts - p) ** 2, 1) <= 0.09) >= 4) for p in pts])
            pa, _ = oracles.partition(np.where(core_pts, a, 0))
            pb, _ = oracles.partition(np.where(core_pts, back, 0))
            assert pa == pb
            assert np.array_equal(a == NOISE, back == NOISE)


class TestDensity:
    def test_counts_example(self):
        ids = [0, 0] + [1] * 10 + [2] * 5
        d = cluster_density(ids)
        assert d[0] == pytest.approx(0.2)
        assert d[2] == pytest.approx(1.0)
        assert d[-1] == pytest.approx(0.5)

    def test_single_cluster(self):
        assert cluster_density([1, 1, 1]).tolist() == [1.0, 1.0, 1.0]

    def test_all_noise(self):
        assert cluster_density([0, 0, 0, 0]).tolist() == [1.0] * 4

    def test_empty(self):
        assert cluster_density([]).size == 0

    def test_bounds_and_shared(self):
        rng = np.random.default_rng(24)
        for _ in range(50):
            ids = dbscan(rng.uniform(0, 2, (int(rng.integers(1, 150)), 3)))
            d = cluster_density(ids)
            assert np.all((d > 0) & (d <= 1))
            assert d.max() == 1.0
            assert np.array_equal(d, oracles.density_reference(ids))
            for c in np.unique(ids):
                assert np.unique(d[ids == c]).size == 1

    def test_monotone_when_largest_grows(self):
        rng = np.random.default_rng(25)
        for _ in range(30):
            ids = rng.integers(0, 5, int(rng.integers(5, 60)))
            d = cluster_density(ids)
            big = int(np.bincount(ids).argmax())
            d2 = cluster_density(np.append(ids, big))[:-1]
            others = ids != big
            assert np.all(d2[others] <= d[others])


class TestEstimate:
    def test_single_box(self):
        a = estimate(Frame("f", [Box3D(0, 0, 0, 1, 1, 1)]))
        assert a.cluster_id.tolist() == [NOISE]
        assert a.density.tolist() == [1.0]

    def test_empty(self):
        a = estimate(Frame("f", []))
        assert len(a) == 0

    def test_blobs_and_singletons(self):
        rng = np.random.default_rng(26)
        boxes = []
        for c in ([0, 0, 0], [5, 5, 0], [-5, 8, 0]):
            for _ in range(12):
                p = np.asarray(c) + rng.normal(0, 0.05, 3)
                boxes.append(Box3D(*p, 1, 1, 1))
        for _ in range(4):
            boxes.append(Box3D(*rng.uniform(20, 40, 3), 1, 1, 1))
        a = estimate(Frame("f", boxes))
        ref = oracles.dbscan_reference(np.array([[b.cx, b.cy, b.cz] for b in boxes]), 0.3, 4)
        assert np.array_equal(a.cluster_id, ref)
        assert np.all(a.density[:36] == 1.0)
        assert np.all(a.density[36:] == pytest.approx(4 / 12))
