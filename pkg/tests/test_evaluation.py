import numpy as np
import pytest

import oracles
from fuzzynms.evaluation import (
    FP,
    IGNORE,
    TP,
    EvalSpec,
    MetricsTable,
    average_precision,
    compare_runs,
    evaluate,
    match_detections,
)
from fuzzynms.geometry import Box3D, Frame, iou_pairs
from fuzzynms.nms import NmsConfig, fuzzy_nms, traditional_nms
from scenarios import car, labelled_frames

NAMES = {0: "Car", 1: "Pedestrian", 2: "Cyclist", 3: "Van"}


class TestMatch:
    def test_exact_hit(self):
        assert match_detections([car()], [car()], 0.7).tolist() == [TP]

    def test_two_on_one(self):
        flags = match_detections([car(score=0.6), car(score=0.9)], [car()], 0.7)
        assert flags.tolist() == [FP, TP]

    def test_below_threshold(self):
        # 4 x 1.8 cars offset by 1 m along x: IoU 3/5 = 0.6 < 0.7
        det = car(cx=1.0)
        assert float(iou_pairs(np.array([[1, 0, 0, 4, 1.8, 1.5, 0]]), np.array([[0, 0, 0, 4, 1.8, 1.5, 0]]))[0]) \
            == pytest.approx(0.6)
        assert match_detections([det], [car()], 0.7).tolist() == [FP]
        assert match_detections([det], [car()], 0.5).tolist() == [TP]

    def test_ignored_gt(self):
        assert match_detections([car()], [car()], 0.7, gt_ignored=[True]).tolist() == [IGNORE]

    def test_dont_care(self):
        det = car(cx=30.0)
        assert match_detections([det], [car()], 0.7, dont_care=[(0, 0, 50, 60)]).tolist() == [IGNORE]
        assert match_detections([det], [car()], 0.7, dont_care=[(40, 0, 90, 60)]).tolist() == [FP]

    def test_no_gt_and_no_dets(self):
        assert match_detections([car()], [], 0.7).tolist() == [FP]
        assert match_detections([], [car()], 0.7).size == 0

    def test_matches_reference(self):
        rng = np.random.default_rng(61)
        for frame in labelled_frames(rng, 40):
            dets, gts = frame.boxes, frame.ground_truth
            ign = rng.uniform(size=len(gts)) < 0.3
            flags = match_detections(dets, gts, 0.5, gt_ignored=ign)
            if dets and gts:
                da, ga = frame.array(), np.array([[g.cx, g.cy, g.cz, g.dx, g.dy, g.dz, g.yaw] for g in gts])
                ious = np.array([[float(iou_pairs(da[[d]], ga[[g]])[0]) for g in range(len(gts))]
                                 for d in range(len(dets))])
            else:
                ious = np.zeros((len(dets), len(gts)))
            assert flags.tolist() == oracles.match_reference(frame.scores.tolist(), ious, 0.5, ign)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([0.9, 0.8, 0.7], [TP, TP, TP], 3) == 1.0

    def test_empty_detector(self):
        assert average_precision([], [], 5) == 0.0

    def test_no_gt(self):
        assert average_precision([], [], 0) == 1.0
        assert average_precision([0.5], [FP], 0) == 0.0

    def test_tp_then_fp(self):
        assert average_precision([0.9, 0.8], [TP, FP], 2) == 0.5
        # eleven-point: positions 0.0 .. 0.5 reach precision 1
        assert average_precision([0.9, 0.8], [TP, FP], 2, recall_points=11) == pytest.approx(6 / 11)

    def test_ignored_dropped(self):
        assert average_precision([0.9, 0.8], [IGNORE, TP], 1) == 1.0

    def test_ties_share_operating_point(self):
        # the FP and TP at 0.5 count together, so recall 1 is reached at precision 1/2
        assert average_precision([0.5, 0.5], [FP, TP], 1) == 0.5

    def test_invalid_recall_points(self):
        with pytest.raises(ValueError):
            average_precision([0.5], [TP], 1, recall_points=20)

    def test_matches_exhaustive(self):
        rng = np.random.default_rng(62)
        for _ in range(300):
            n = int(rng.integers(0, 40))
            scores = np.round(rng.uniform(0, 1, n), 1)
            flags = rng.choice([TP, FP, IGNORE], n, p=[0.5, 0.4, 0.1])
            num_gt = int(np.sum(flags == TP) + rng.integers(0, 4))
            for rp in (40, 11):
                got = average_precision(scores, flags, num_gt, rp)
                assert got == oracles.ap_exhaustive(scores.tolist(), flags.tolist(), num_gt, rp)
                assert 0.0 <= got <= 1.0

    def test_top_tp_never_decreases(self):
        rng = np.random.default_rng(63)
        for _ in range(200):
            n = int(rng.integers(0, 30))
            scores = rng.uniform(0, 0.99, n)
            flags = rng.choice([TP, FP], n)
            num_gt = int(np.sum(flags == TP)) + 1
            before = average_precision(scores, flags, num_gt)
            after = average_precision(np.append(scores, 1.0), np.append(flags, TP), num_gt)
            assert after >= before


class TestEvaluate:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            EvalSpec(iou_threshold={"Car": 0.0})
        with pytest.raises(ValueError):
            EvalSpec(recall_points=20)
        pos = EvalSpec().recall_positions()
        assert np.all(np.diff(pos) > 0) and pos[0] > 0 and pos[-1] == 1.0

    def test_perfect_frames(self):
        gts = [car(cx=0), car(cx=10)]
        frame = Frame("f", [car(cx=0, score=0.9), car(cx=10, score=0.8)], ground_truth=gts)
        ap = evaluate([frame], [[(0, 0.9), (1, 0.8)]], EvalSpec(), NAMES)
        assert ap["Car"] == {"easy": 1.0, "moderate": 1.0, "hard": 1.0}
        assert ap["Pedestrian"]["easy"] == 1.0

    def test_difficulty_gating(self):
        # a short, occluded GT counts only for hard
        gts = [car(cx=0), car(cx=10, height=30.0, occluded=2)]
        frame = Frame("f", [car(cx=0, score=0.9)], ground_truth=gts)
        ap = evaluate([frame], [[(0, 0.9)]], EvalSpec(), NAMES)
        assert ap["Car"]["easy"] == 1.0
        assert ap["Car"]["hard"] == 0.5

    def test_van_is_neighbour(self):
        frame = Frame("f", [car(score=0.9)], ground_truth=[car(label=3)])
        ap = evaluate([frame], [[(0, 0.9)]], EvalSpec(), NAMES)
        # matched to an ignored Van: neither TP nor FP, and no Car GT counted
        assert ap["Car"]["easy"] == 1.0

    def test_matches_oracle_pipeline(self):
        rng = np.random.default_rng(64)
        frames = labelled_frames(rng, 20)
        kept = [traditional_nms(f, iou_thresh=0.5).kept for f in frames]
        spec = EvalSpec()
        ap = evaluate(frames, kept, spec, NAMES)
        for diff_name, (min_h, max_occ, max_trunc) in spec.difficulties.items():
            scores, flags, num_gt = [], [], 0
            for frame, survivors in zip(frames, kept):
                gts = frame.ground_truth
                ign = [NAMES[g.label] != "Car" or g.bbox_2d[3] < min_h or g.occluded > max_occ
                       or g.truncated > max_trunc for g in gts]
                num_gt += sum(not i for i in ign)
                dets = [frame.boxes[i] for i, _ in survivors]
                ious = np.array([[float(iou_pairs(np.array([[d.cx, d.cy, d.cz, d.dx, d.dy, d.dz, d.yaw]]),
                                                  np.array([[g.cx, g.cy, g.cz, g.dx, g.dy, g.dz, g.yaw]]))[0])
                                  for g in gts] for d in dets]).reshape(len(dets), len(gts))
                flags += oracles.match_reference([d.score for d in dets], ious, 0.7, ign)
                scores += [d.score for d in dets]
            assert ap["Car"][diff_name] == oracles.ap_exhaustive(scores, flags, num_gt, 40)


class TestCompare:
    def _frames(self):
        return labelled_frames(np.random.default_rng(65), 8)

    def test_identical_variants(self):
        fn = lambda f: traditional_nms(f, iou_thresh=0.5)
        table = compare_runs(self._frames(), {"a": fn, "b": fn}, EvalSpec(), NAMES)
        a, b = table.rows
        for col in table.columns:
            if col not in ("method", "time_mean_ms", "time_p95_ms"):
                assert a[col] == b[col]

    def test_unified_fuzzy_equals_traditional(self):
        cfg = NmsConfig.unified(0.5, 0.0)
        variants = {
            "traditional": lambda f: traditional_nms(f, iou_thresh=0.5, score_threshold=0.0),
            "fuzzy": lambda f: fuzzy_nms(f, ["LVHD"] * len(f.boxes), cfg),
        }
        table = compare_runs(self._frames(), variants, EvalSpec(), NAMES)
        t, f = table.rows
        assert {k: v for k, v in t.items() if not k.startswith(("time_", "method"))} == \
               {k: v for k, v in f.items() if not k.startswith(("time_", "method"))}

    def test_csv_format(self):
        table = compare_runs(self._frames(), {"t": lambda f: traditional_nms(f)}, EvalSpec(), NAMES)
        header, row = table.to_csv().strip().split("\n")
        cols = header.split(",")
        assert cols[0] == "method" and "Car_moderate" in cols and cols[-2:] == ["time_mean_ms", "time_p95_ms"]
        t_mean = row.split(",")[-2]
        assert len(t_mean.split(".")[1]) == 2
        assert "time_" not in table.to_csv(timing=False)

    def test_deterministic(self):
        fn = {"t": lambda f: traditional_nms(f)}
        a = compare_runs(self._frames(), fn, EvalSpec(), NAMES).to_csv(timing=False)
        b = compare_runs(self._frames(), fn, EvalSpec(), NAMES).to_csv(timing=False)
        assert a == b

    def test_empty_frames_header_only(self):
        table = compare_runs([], {"t": lambda f: traditional_nms(f)}, EvalSpec(), NAMES)
        assert table.rows == [] and table.to_csv().count("\n") == 1
        assert isinstance(table, MetricsTable)
