"""Bindings consistency: array path vs library/CLI path, index selection."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from detgain.curation import CurationConfig, pool_stats, select_topk
from detgain.ingest import save_detections, save_ground_truth
from detgain.matching import match_dataset
from detgain.model import (
    DetectionRecord,
    GroundTruthRecord,
    IouThresholdGrid,
    LearnabilityRecord,
    clamp_score,
)
from detgain_bindings import BindingsConfig, compute_detgain, select_topk_indices

from detgain.ingest import Dataset, ImageInfo

GRID = IouThresholdGrid.coco()
CANVAS = (640, 480)


def build_world(n_images=100, n_classes=5, seed=0):
    rng = np.random.default_rng(seed)
    images, gts = [], []
    for i in range(1, n_images + 1):
        images.append(ImageInfo(i, *CANVAS))
        for _ in range(int(rng.integers(1, 5))):
            w, h = rng.uniform(40, 140, 2)
            x = rng.uniform(0, CANVAS[0] - w)
            y = rng.uniform(0, CANVAS[1] - h)
            gts.append(GroundTruthRecord(i, int(rng.integers(1, n_classes + 1)), (x, y, w, h)))
    ds = Dataset(tuple(images), tuple(gts),
                 tuple((c, f"cat{c}") for c in range(1, n_classes + 1)))

    def dump(lo, hi, drift, fp_rate, dump_seed):
        r = np.random.default_rng(dump_seed)
        out = []
        for gt in ds.ground_truths:
            x, y, w, h = gt.bbox
            x += r.uniform(-drift, drift) * w
            y += r.uniform(-drift, drift) * h
            out.append(DetectionRecord(gt.image_id, gt.category_id, (x, y, w, h),
                                       clamp_score(float(r.uniform(lo, hi)))))
        for im in ds.images:
            for _ in range(r.poisson(fp_rate)):
                w, h = r.uniform(30, 100, 2)
                x = r.uniform(0, CANVAS[0] - w)
                y = r.uniform(0, CANVAS[1] - h)
                out.append(DetectionRecord(im.image_id, int(r.integers(1, n_classes + 1)),
                                           (x, y, w, h), clamp_score(float(r.uniform(0.3, 0.6)))))
        return out

    teacher = dump(0.85, 0.99, 0.0, 0.2, seed + 1)
    student = dump(0.4, 0.7, 0.12, 1.5, seed + 2)
    return ds, teacher, student


def arrays_by_image(ds, dets):
    by_image = {i: ([], [], []) for i in ds.image_ids()}
    for d in dets:
        boxes, scores, labels = by_image[d.image_id]
        boxes.append(d.bbox)
        scores.append(d.score)
        labels.append(d.category_id)
    gts = {i: ([], []) for i in ds.image_ids()}
    for g in ds.ground_truths:
        boxes, labels = gts[g.image_id]
        boxes.append(g.bbox)
        labels.append(g.category_id)
    ids = ds.image_ids()
    preds = [tuple(np.asarray(a) for a in by_image[i]) for i in ids]
    truths = [tuple(np.asarray(a) for a in gts[i]) for i in ids]
    return preds, truths


@pytest.fixture(scope="module")
def world():
    return build_world()


@pytest.fixture(scope="module")
def shared_config(world):
    ds, _, student = world
    stats = pool_stats(match_dataset(student, ds, GRID), GRID)
    return BindingsConfig.with_stats(stats)


class TestComputeDetgain:
    def test_empty_predictions_score_zero(self, shared_config):
        empty_pred = (np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=int))
        empty_gt = (np.zeros((0, 4)), np.zeros(0, dtype=int))
        out = compute_detgain([empty_pred] * 3, [empty_gt] * 3, shared_config)
        assert out.tolist() == [0.0, 0.0, 0.0]

    def test_matches_cli_score_bit_for_bit(self, world, shared_config, tmp_path):
        """The array path and the file-based CLI produce identical floats on
        a shared 100-image fixture, for both model dumps."""
        ds, teacher, student = world
        gt_path = str(tmp_path / "gt.json")
        teacher_path = str(tmp_path / "teacher.json")
        student_path = str(tmp_path / "student.json")
        out_path = str(tmp_path / "scores.csv")
        save_ground_truth(ds, gt_path)
        save_detections(teacher, teacher_path)
        save_detections(student, student_path)
        proc = subprocess.run(
            [sys.executable, "-m", "detgain.cli", "score", "--gt", gt_path,
             "--teacher", teacher_path, "--student", student_path, "--out", out_path],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        with open(out_path, newline="") as fh:
            rows = {int(r["image_id"]): r for r in csv.DictReader(fh)}
        assert len(rows) == 100

        teacher_preds, truths = arrays_by_image(ds, teacher)
        student_preds, _ = arrays_by_image(ds, student)
        gain_t = compute_detgain(teacher_preds, truths, shared_config)
        gain_s = compute_detgain(student_preds, truths, shared_config)
        for pos, image_id in enumerate(ds.image_ids()):
            assert gain_t[pos] == float(rows[image_id]["delta_teacher"])
            assert gain_s[pos] == float(rows[image_id]["delta_student"])
            gap = gain_t[pos] - gain_s[pos]
            assert gap == float(rows[image_id]["learnability"])

    def test_matches_appendix_style_single_cell(self, world):
        """One perfect detection against a one-class pool reproduces the
        library's closed-form aggregation exactly."""
        from detgain.closedform import delta_ap_tp_uniform
        from detgain.model import ClassThresholdStats

        cells = [ClassThresholdStats(1, tau, 800, 9200, 1000) for tau in GRID.thresholds]
        config = BindingsConfig.with_stats(cells)
        pred = (np.array([[10.0, 10.0, 50.0, 40.0]]), np.array([0.7]), np.array([1]))
        gt = (np.array([[10.0, 10.0, 50.0, 40.0]]), np.array([1]))
        (value,) = compute_detgain([pred], [gt], config)
        expect = sum(
            delta_ap_tp_uniform(0.7, c) for c in cells
        ) / (1 * len(GRID))
        assert value == expect

    def test_shape_mismatch_names_image(self, shared_config):
        good = (np.zeros((1, 4)) + (0, 0, 10, 10), np.array([0.5]), np.array([1]))
        bad = (np.zeros((2, 4)) + (0, 0, 10, 10), np.array([0.5]), np.array([1]))
        empty_gt = (np.zeros((0, 4)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError, match="image 1"):
            compute_detgain([good, bad], [empty_gt, empty_gt], shared_config)

    def test_entry_count_mismatch(self, shared_config):
        empty_gt = (np.zeros((0, 4)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError, match="entries"):
            compute_detgain([], [empty_gt], shared_config)

    def test_config_without_stats_rejected(self):
        pred = (np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=int))
        gt = (np.zeros((0, 4)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError, match="stat"):
            compute_detgain([pred], [gt], BindingsConfig())

    def test_fixed_ratio_constructor(self):
        config = BindingsConfig.with_fixed_ratio_stats({1: 100})
        cell = config.stats[(1, 0.5)]
        assert (cell.tp_count, cell.fp_count) == (100, 900)


class TestSelectTopkIndices:
    def test_full_ratio_returns_score_order(self):
        out = select_topk_indices([0.1, 0.9, 0.5], 1.0)
        assert out == [1, 2, 0]

    def test_eighty_to_sixteen(self):
        rng = np.random.default_rng(1)
        out = select_topk_indices(rng.normal(size=80), 0.2)
        assert len(out) == 16

    def test_all_equal_takes_lowest_indices(self):
        out = select_topk_indices([1.0] * 80, 0.2)
        assert out == list(range(16))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            select_topk_indices([], 0.5)

    def test_bad_ratio_rejected(self):
        for ratio in (0.0, -1.0, 1.5):
            with pytest.raises(ValueError):
                select_topk_indices([1.0], ratio)

    def test_matches_primary_select_topk_on_random_vectors(self):
        """Index selection agrees with the primary library's id selection on
        1000 random score vectors (ids = indices)."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 120))
            ratio = float(rng.uniform(0.01, 1.0))
            values = rng.normal(size=n)
            if rng.random() < 0.2:  # exercise the tie-break path too
                values = np.round(values, 1)
            records = [LearnabilityRecord.from_deltas(i, float(v), 0.0)
                       for i, v in enumerate(values)]
            cfg = CurationConfig(ratio=ratio, superbatch_size=n)
            assert select_topk_indices(values, ratio) == select_topk(records, cfg)
