import math

import numpy as np
import pytest

import oracles
from fuzzynms.geometry import (
    Box3D,
    Frame,
    bev_corners,
    bev_intersection,
    boxes_to_array,
    candidate_pairs,
    diou,
    iou,
    iou_3d,
    iou_bev,
    iou_indexed,
    iou_pairs,
    normalize_yaw,
    pairwise_diou,
    pairwise_iou,
    volume,
    volumes,
)


def box(cx=0.0, cy=0.0, cz=0.0, dx=1.0, dy=1.0, dz=1.0, yaw=0.0, **kw):
    return Box3D(cx, cy, cz, dx, dy, dz, yaw, **kw)


def from_row(row, **kw):
    return Box3D(*map(float, row), **kw)


class TestBox3D:
    def test_yaw_normalized(self):
        b = box(yaw=3 * math.pi / 2)
        assert b.yaw == pytest.approx(-math.pi / 2)
        assert -math.pi <= box(yaw=-7.0).yaw <= math.pi

    @pytest.mark.parametrize("field,value", [("dx", 0.0), ("dy", -1.0), ("dz", float("nan")),
                                             ("score", 1.5), ("score", -0.1), ("cx", float("inf"))])
    def test_invalid_fields(self, field, value):
        kw = {field: value}
        with pytest.raises(ValueError):
            box(**kw)

    def test_negative_label(self):
        with pytest.raises(ValueError):
            box(label=-1)

    def test_normalize_yaw_range(self):
        for a in np.linspace(-20, 20, 101):
            w = normalize_yaw(a)
            assert -math.pi <= w <= math.pi
            assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)

    def test_frame_accessors(self):
        f = Frame("x", [box(score=0.3, label=2), box(cx=5, score=0.7)])
        assert f.scores.tolist() == [0.3, 0.7]
        assert f.labels.tolist() == [2, 0]
        assert f.array().shape == (2, 7)

    def test_boxes_to_array(self):
        assert boxes_to_array([]).shape == (0, 7)
        assert boxes_to_array(np.zeros((0,))).shape == (0, 7)
        with pytest.raises(ValueError):
            boxes_to_array(np.zeros((3, 6)))


class TestVolume:
    @pytest.mark.parametrize("dims,expected", [((4.0, 1.8, 1.5), 10.8), ((1, 1, 1), 1.0), ((0.6, 0.6, 1.7), 0.612)])
    def test_examples(self, dims, expected):
        assert volume(box(dx=dims[0], dy=dims[1], dz=dims[2])) == pytest.approx(expected, abs=1e-12)

    def test_vectorised(self):
        bs = [box(dx=2, dy=3, dz=4), box(dx=0.5, dy=0.5, dz=2)]
        assert volumes(bs).tolist() == [24.0, 0.5]


class TestCorners:
    def test_axis_aligned_ccw(self):
        c = bev_corners(box(dx=2, dy=2))
        assert {tuple(p) for p in np.round(c, 12)} == {(1, -1), (1, 1), (-1, 1), (-1, -1)}
        # positive signed area means counter-clockwise
        x, y = c[:, 0], c[:, 1]
        assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) > 0

    def test_quarter_turn_swaps_extents(self):
        c = bev_corners(box(dx=4, dy=2, yaw=math.pi / 2))
        assert np.ptp(c[:, 0]) == pytest.approx(2.0)
        assert np.ptp(c[:, 1]) == pytest.approx(4.0)

    def test_half_turn_same_set(self):
        a = bev_corners(box(cx=1, cy=2, dx=3, dy=1.5, yaw=0.0))
        b = bev_corners(box(cx=1, cy=2, dx=3, dy=1.5, yaw=math.pi))
        key = lambda p: tuple(np.round(p, 9))
        assert sorted(map(key, a)) == sorted(map(key, b))

    def test_full_turn_identical(self):
        a = bev_corners(box(dx=3, dy=1.5, yaw=0.4))
        b = bev_corners(box(dx=3, dy=1.5, yaw=0.4 + 2 * math.pi))
        assert np.abs(a - b).max() <= 1e-9

    def test_matches_oracle_footprint(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, _ = oracles.random_box_pair(rng)
            assert np.allclose(bev_corners(from_row(a)), oracles.footprint(a), atol=1e-12)


class TestIoUExamples:
    def test_self(self):
        b = box(cx=12.3, cy=-40.1, dx=3.9, dy=1.6, dz=1.5, yaw=0.77)
        assert iou_bev(b, b) == pytest.approx(1.0, abs=1e-9)
        assert iou_3d(b, b) == pytest.approx(1.0, abs=1e-9)

    def test_offset_unit_squares(self):
        assert iou_bev(box(), box(cx=0.5)) == pytest.approx(1 / 3, abs=1e-6)
        assert iou_3d(box(), box(cx=0.5)) == pytest.approx(1 / 3, abs=1e-6)

    def test_rotated_square(self):
        # octagon area 8(sqrt2 - 1) over union 8 - that
        expected = 8 * (math.sqrt(2) - 1) / (8 - 8 * (math.sqrt(2) - 1))
        got = iou_bev(box(dx=2, dy=2), box(dx=2, dy=2, yaw=math.pi / 4))
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(0.7071, abs=1e-4)

    def test_vertical_separation(self):
        assert iou_3d(box(), box(cz=1.0)) == 0.0
        assert iou_3d(box(), box(cz=0.5)) == pytest.approx(1 / 3, abs=1e-12)

    def test_disjoint_and_shared_edge(self):
        assert iou_bev(box(), box(cx=5)) == 0.0
        assert iou_bev(box(), box(cx=1.0)) == 0.0
        assert bev_intersection(box(), box(cx=1.0)) == 0.0

    def test_containment(self):
        assert iou_bev(box(dx=4, dy=4), box(dx=1, dy=1, yaw=0.3)) == pytest.approx(1 / 16, abs=1e-12)

    def test_mode_dispatch(self):
        a, b = box(), box(cx=0.5, cz=0.5)
        assert iou(a, b, "bev") == iou_bev(a, b)
        assert iou(a, b, "3d") == iou_3d(a, b)
        with pytest.raises(ValueError):
            iou(a, b, "2d")


class TestIoUProperties:
    def test_symmetry_exact(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            ra, rb = oracles.random_box_pair(rng)
            a, b = from_row(ra), from_row(rb)
            assert iou_bev(a, b) == iou_bev(b, a)
            assert iou_3d(a, b) == iou_3d(b, a)
        arr = np.stack([oracles.random_box_pair(rng)[k] for _ in range(200) for k in (0, 1)])
        i = np.arange(0, len(arr), 2)
        assert np.array_equal(iou_indexed(arr, i, i + 1), iou_indexed(arr, i + 1, i))
        assert np.array_equal(iou_pairs(arr[i], arr[i + 1], "3d"), iou_pairs(arr[i + 1], arr[i], "3d"))

    def test_rigid_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            ra, rb = oracles.random_box_pair(rng)
            theta = rng.uniform(-math.pi, math.pi)
            t = rng.uniform(-50, 50, 2)
            c, s = math.cos(theta), math.sin(theta)

            def move(r):
                out = r.copy()
                out[0], out[1] = c * r[0] - s * r[1] + t[0], s * r[0] + c * r[1] + t[1]
                out[6] = r[6] + theta
                return from_row(out)

            base = iou_bev(from_row(ra), from_row(rb))
            assert abs(iou_bev(move(ra), move(rb)) - base) <= 1e-9

    def test_bounds_and_self_volume(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            ra, rb = oracles.random_box_pair(rng)
            a, b = from_row(ra), from_row(rb)
            assert 0.0 <= iou_bev(a, b) <= 1.0
            assert 0.0 <= iou_3d(a, b) <= 1.0
            assert iou_3d(a, a) * volume(a) == pytest.approx(volume(a), abs=1e-9)

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(14)
        pairs = [oracles.random_box_pair(rng) for _ in range(400)]
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        # degenerate configurations: identical, shared edge, contained, quarter turn
        extra_a = np.array([[0, 0, 0, 2, 1, 1, 0.3], [0, 0, 0, 1, 1, 1, 0], [0, 0, 0, 4, 4, 1, 0.2],
                            [50, 60, 0, 3, 1, 1, 0.1]])
        extra_b = np.array([[0, 0, 0, 2, 1, 1, 0.3], [1, 0, 0, 1, 1, 1, 0], [0.1, 0, 0, 1, 1, 1, 1.0],
                            [50, 60, 0, 1, 3, 1, 0.1 + math.pi / 2]])
        a, b = np.vstack([a, extra_a]), np.vstack([b, extra_b])
        for mode, fn in (("bev", iou_bev), ("3d", iou_3d)):
            got = iou_pairs(a, b, mode)
            ref = np.array([fn(from_row(x), from_row(y)) for x, y in zip(a, b)])
            assert np.abs(got - ref).max() <= 1e-9

    def test_indexed_equals_pairs(self):
        rng = np.random.default_rng(15)
        arr, _, _ = oracles.random_frame_array(rng, 120)
        i, j = np.triu_indices(len(arr), 1)
        assert np.array_equal(iou_indexed(arr, i, j), iou_pairs(arr[i], arr[j]))

    def test_monte_carlo_3d(self):
        rng = np.random.default_rng(16)
        sampler = oracles.StratifiedSampler(400, rng)
        for _ in range(60):
            ra, rb = oracles.random_box_pair(rng)
            ref, sigma = oracles.mc_iou(ra, rb, sampler, "3d")
            assert abs(iou_3d(from_row(ra), from_row(rb)) - ref) <= 3 * sigma


class TestCandidates:
    def test_superset_of_overlaps(self):
        rng = np.random.default_rng(17)
        for n in (0, 1, 2, 50, 200):
            arr, _, _ = oracles.random_frame_array(rng, n)
            for mode in ("bev", "3d"):
                i, j = candidate_pairs(arr, mode)
                assert np.all(i < j)
                found = set(zip(i.tolist(), j.tolist()))
                full = oracles.dense_iou_matrix(arr, iou_pairs, mode)
                nz = {(a, b) for a, b in zip(*np.nonzero(np.triu(full, 1)))}
                assert nz <= found

    def test_pairwise_matrix(self):
        rng = np.random.default_rng(18)
        arr, _, _ = oracles.random_frame_array(rng, 80)
        mat = pairwise_iou(arr)
        ref = oracles.dense_iou_matrix(arr, iou_pairs)
        np.fill_diagonal(ref, 1.0)
        assert np.array_equal(mat, ref)
        assert np.array_equal(mat, mat.T)


class TestDiou:
    def test_identical(self):
        b = box(dx=2, dy=1)
        assert diou(b, b) == pytest.approx(1.0)

    def test_far_negative(self):
        assert diou(box(), box(cx=10)) < 0

    def test_penalty_value(self):
        # offset unit squares: rho^2 = 0.25, enclosing 1.5 x 1 -> c^2 = 3.25
        assert diou(box(), box(cx=0.5)) == pytest.approx(1 / 3 - 0.25 / 3.25, abs=1e-12)

    def test_matrix_matches_oracle(self):
        rng = np.random.default_rng(19)
        arr, _, _ = oracles.random_frame_array(rng, 60)
        for mode in ("bev", "3d"):
            mat = pairwise_diou(arr, mode)
            iou_m = oracles.dense_iou_matrix(arr, iou_pairs, mode)
            ref = iou_m - oracles.penalty_matrix(arr, mode)
            mask = iou_m > 0
            assert np.allclose(mat[mask], ref[mask], atol=1e-12)
