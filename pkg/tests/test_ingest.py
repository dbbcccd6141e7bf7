"""Annotation I/O and corruption-pipeline behavior."""

import json

import numpy as np
import pytest

from detgain.ingest import (
    CorruptionConfig,
    Dataset,
    ImageInfo,
    ParseError,
    corrupt_dataset,
    corrupt_delete,
    corrupt_fake_boxes,
    corrupt_jitter,
    corrupt_labels,
    image_rng,
    load_detections,
    load_ground_truth,
    save_ground_truth,
)
from detgain.matching import iou
from detgain.model import GroundTruthRecord


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def minimal_gt(n_images=1, anns=None, cats=None):
    return {
        "images": [{"id": i + 1, "width": 640, "height": 480} for i in range(n_images)],
        "annotations": anns if anns is not None else [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 10, 50, 40], "iscrowd": 0}
        ],
        "categories": cats if cats is not None else [{"id": 1, "name": "thing"}],
    }


def synthetic_dataset(n_images=1000, gts_per_image=3, n_cats=5, seed=0):
    rng = np.random.default_rng(seed)
    images, gts = [], []
    for i in range(1, n_images + 1):
        images.append(ImageInfo(i, 640, 480))
        for _ in range(gts_per_image):
            w, h = rng.uniform(30, 120, 2)
            x = rng.uniform(0, 640 - w)
            y = rng.uniform(0, 480 - h)
            gts.append(GroundTruthRecord(i, int(rng.integers(1, n_cats + 1)), (x, y, w, h)))
    cats = tuple((c, f"cat{c}") for c in range(1, n_cats + 1))
    return Dataset(tuple(images), tuple(gts), cats)


class TestLoadGroundTruth:
    def test_minimal_file(self, tmp_path):
        ds = load_ground_truth(write_json(tmp_path / "gt.json", minimal_gt()))
        assert len(ds.ground_truths) == 1
        assert ds.load_report.n_crowd_dropped == 0

    def test_crowd_records_dropped_and_counted(self, tmp_path):
        payload = minimal_gt()
        payload["annotations"].append(
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5], "iscrowd": 1}
        )
        ds = load_ground_truth(write_json(tmp_path / "gt.json", payload))
        assert len(ds.ground_truths) == 1
        assert ds.load_report.n_crowd_dropped == 1

    def test_zero_width_box_names_annotation(self, tmp_path):
        payload = minimal_gt(anns=[
            {"id": 77, "image_id": 1, "category_id": 1, "bbox": [0, 0, 0, 5], "iscrowd": 0}
        ])
        with pytest.raises(ParseError, match="77"):
            load_ground_truth(write_json(tmp_path / "gt.json", payload))

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "gt.json"
        p.write_text("{nope")
        with pytest.raises(ParseError):
            load_ground_truth(str(p))

    def test_missing_key(self, tmp_path):
        with pytest.raises(ParseError, match="annotations"):
            load_ground_truth(write_json(tmp_path / "gt.json", {"images": [], "categories": []}))

    def test_box_clipped_to_image(self, tmp_path):
        payload = minimal_gt(anns=[
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [600, 400, 100, 100], "iscrowd": 0}
        ])
        ds = load_ground_truth(write_json(tmp_path / "gt.json", payload))
        x, y, w, h = ds.ground_truths[0].bbox
        assert x + w <= 640 and y + h <= 480

    def test_round_trip(self, tmp_path):
        ds = load_ground_truth(write_json(tmp_path / "gt.json", minimal_gt()))
        save_ground_truth(ds, str(tmp_path / "copy.json"))
        again = load_ground_truth(str(tmp_path / "copy.json"))
        assert again.ground_truths == ds.ground_truths


class TestLoadDetections:
    def test_single_record(self, tmp_path):
        recs = load_detections(write_json(
            tmp_path / "d.json",
            [{"image_id": 1, "category_id": 3, "bbox": [0, 0, 10, 10], "score": 0.9}],
        ))
        assert len(recs) == 1
        assert recs[0].category_id == 3

    def test_empty_array(self, tmp_path):
        assert load_detections(write_json(tmp_path / "d.json", [])) == []

    def test_score_one_is_clamped(self, tmp_path):
        recs = load_detections(write_json(
            tmp_path / "d.json",
            [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 1.0}],
        ))
        assert recs[0].score == 1.0 - 1e-6

    def test_score_well_outside_unit_interval(self, tmp_path):
        with pytest.raises(ParseError):
            load_detections(write_json(
                tmp_path / "d.json",
                [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 1.5}],
            ))

    def test_grouped_by_image_preserving_order(self, tmp_path):
        recs = load_detections(write_json(tmp_path / "d.json", [
            {"image_id": 2, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.1},
            {"image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5},
            {"image_id": 2, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.9},
        ]))
        assert [r.image_id for r in recs] == [1, 2, 2]
        assert [r.score for r in recs if r.image_id == 2] == [0.1, 0.9]


class TestJitter:
    def test_factors_bounded_with_min_deviation(self):
        rng = np.random.default_rng(0)
        gt = GroundTruthRecord(1, 1, (200, 200, 100, 80))
        for _ in range(10_000):
            out = corrupt_jitter(gt, (10_000, 10_000), rng)
            sw = out.bbox[2] / 100.0
            sh = out.bbox[3] / 80.0
            assert 0.5 <= sw <= 1.5 and 0.5 <= sh <= 1.5
            assert abs(sw - 1.0) >= 0.05 and abs(sh - 1.0) >= 0.05

    def test_center_preserved_when_no_clipping(self):
        rng = np.random.default_rng(1)
        gt = GroundTruthRecord(1, 1, (300, 200, 60, 40))
        for _ in range(100):
            out = corrupt_jitter(gt, (640, 480), rng)
            assert out.bbox[0] + out.bbox[2] / 2 == pytest.approx(330.0)
            assert out.bbox[1] + out.bbox[3] / 2 == pytest.approx(220.0)

    def test_border_box_clipped_inside(self):
        rng = np.random.default_rng(2)
        gt = GroundTruthRecord(1, 1, (0, 0, 100, 100))
        for _ in range(200):
            out = corrupt_jitter(gt, (640, 480), rng)
            x, y, w, h = out.bbox
            assert x >= 0 and y >= 0 and x + w <= 640 and y + h <= 480 and w > 0 and h > 0


class TestLabelNoise:
    def gts(self, n):
        return [GroundTruthRecord(1, 1, (i * 10, 0, 5, 5)) for i in range(n)]

    def test_fraction_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            out = corrupt_labels(self.gts(10), [1, 2, 3], rng)
            changed = sum(a.category_id != b.category_id for a, b in zip(out, self.gts(10)))
            assert 2 <= changed <= 5

    def test_single_box_always_relabeled(self):
        rng = np.random.default_rng(4)
        out = corrupt_labels(self.gts(1), [1, 2], rng)
        assert out[0].category_id == 2

    def test_single_category_is_identity_with_warning(self):
        rng = np.random.default_rng(5)
        with pytest.warns(UserWarning):
            out = corrupt_labels(self.gts(3), [1], rng)
        assert out == self.gts(3)


class TestDeletion:
    def test_fraction_bounds(self):
        rng = np.random.default_rng(6)
        gts = [GroundTruthRecord(1, 1, (i * 10, 0, 5, 5)) for i in range(10)]
        for _ in range(200):
            out = corrupt_delete(gts, rng)
            assert 5 <= len(out) <= 8

    def test_empty_list_unchanged(self):
        assert corrupt_delete([], np.random.default_rng(7)) == []

    def test_two_boxes_keep_one(self):
        rng = np.random.default_rng(8)
        gts = [GroundTruthRecord(1, 1, (0, 0, 5, 5)), GroundTruthRecord(1, 1, (20, 0, 5, 5))]
        out = corrupt_delete(gts, rng)
        assert len(out) == 1


class TestFakeBoxes:
    def test_inserted_boxes_barely_overlap_existing(self):
        rng = np.random.default_rng(9)
        gts = [GroundTruthRecord(1, 1, (50 * i, 50 * i, 40, 40)) for i in range(8)]
        out = corrupt_fake_boxes(gts, (640, 480), [1, 2], 1, rng)
        fakes = out[len(gts):]
        assert 1 <= len(fakes) <= 4  # floor(8 * r), r in [0.2, 0.5]
        for fake in fakes:
            assert max(iou(fake.bbox, g.bbox) for g in gts) < 0.1
            x, y, w, h = fake.bbox
            assert 0.05 * 640 <= w <= 0.2 * 640 and 0.05 * 480 <= h <= 0.2 * 480

    def test_cap_at_twenty(self):
        rng = np.random.default_rng(10)
        gts = [GroundTruthRecord(1, 1, (6 * i, 400, 5, 5)) for i in range(100)]
        out = corrupt_fake_boxes(gts, (640, 480), [1], 1, rng)
        assert len(out) - len(gts) <= 20

    def test_no_boxes_no_fakes(self):
        out = corrupt_fake_boxes([], (640, 480), [1], 1, np.random.default_rng(11))
        assert out == []


class TestCorruptDataset:
    def test_p_zero_is_identity(self):
        ds = synthetic_dataset(50)
        result = corrupt_dataset(ds, CorruptionConfig(probability=0.0, seed=3))
        assert result.dataset.ground_truths == ds.ground_truths
        assert result.modified_ids == ()

    def test_p_one_modifies_every_image(self):
        ds = synthetic_dataset(1000)
        result = corrupt_dataset(ds, CorruptionConfig(probability=1.0, seed=3))
        assert len(result.selected_ids) == 1000
        assert len(result.modified_ids) == 1000

    def test_p_one_deletion_only_loses_boxes_everywhere(self):
        ds = synthetic_dataset(100)
        result = corrupt_dataset(ds, CorruptionConfig(probability=1.0, enabled=("deletion",), seed=4))
        before = ds.gts_by_image()
        after = result.dataset.gts_by_image()
        for image_id, gts in before.items():
            assert len(after[image_id]) < len(gts)

    def test_binomial_fraction_at_p_04(self):
        ds = synthetic_dataset(1000)
        result = corrupt_dataset(ds, CorruptionConfig(probability=0.4, seed=5))
        frac = len(result.selected_ids) / 1000
        assert 0.35 <= frac <= 0.45

    def test_deterministic_given_seed(self):
        ds = synthetic_dataset(60)
        cfg = CorruptionConfig(probability=0.7, seed=9)
        a = corrupt_dataset(ds, cfg)
        b = corrupt_dataset(ds, cfg)
        assert a.dataset.ground_truths == b.dataset.ground_truths
        assert a.modified_ids == b.modified_ids

    def test_rng_streams_independent_of_image_order(self):
        assert image_rng(1, 5).random() == image_rng(1, 5).random()
        assert image_rng(1, 5).random() != image_rng(1, 6).random()

    def test_output_survives_round_trip(self, tmp_path):
        ds = synthetic_dataset(20)
        result = corrupt_dataset(ds, CorruptionConfig(probability=1.0, seed=6))
        path = tmp_path / "corrupt.json"
        save_ground_truth(result.dataset, str(path))
        again = load_ground_truth(str(path))
        assert len(again.ground_truths) == len(result.dataset.ground_truths)
