#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : test_evaluator.py
@Time    : 2025/7/14 16:30
@Author  : zhouming
"""
from typing import Dict, List

import numpy as np
import pytest

from apis.loop.bootstrap import BootstrapConfig, bootstrap_pretrain
from apis.loop.loop_runner import eval_images
from core.evaluator import compute_ap, evaluate_model, pseudo_quality
from core.exceptions import NoGroundTruth
from core.geometry import Annotation, BBox, CategoryId, CategoryRole, iou
from core.scene_generator import SceneGenerator
from models.database_model import ImageRecord, ImageRole
from models.detector_model import DESCRIPTOR_DIM, DetectorParams, SupportSet
from models.metrics_model import COCO_IOU_THRESHOLDS
from models.scene_model import CategoryProfile, CategoryRegistry, SceneConfig, ShapeArchetype, TableKind
from testcase.base_testcase import CAN, CUBE, TAPE, BaseTestCase, box, det, gt, make_record


def _oracle_ap(detections: Dict[str, list], truth: Dict[str, List[BBox]], threshold: float) -> float:
    """逐个检测按分数顺序匹配，再用“右侧最大精确率”逐召回点累加"""
    flat = sorted(
        ((d.score, image_id, d.box) for image_id, dets in detections.items() for d in dets),
        key=lambda x: (-x[0], x[1], x[2].sort_key()),
    )
    n_gt = sum(len(v) for v in truth.values())
    used = {k: set() for k in truth}
    hits = []
    for _, image_id, b in flat:
        options = [
            (iou(b, g), -j, j)
            for j, g in enumerate(truth.get(image_id, []))
            if j not in used[image_id] and iou(b, g) >= threshold
        ]
        if options:
            used[image_id].add(max(options)[2])
            hits.append(True)
        else:
            hits.append(False)
    total = 0.0
    for i, hit in enumerate(hits):
        if not hit:
            continue
        best = 0.0
        for j in range(i, len(hits)):
            tp = sum(hits[:j + 1])
            best = max(best, tp / (j + 1))
        total += best / n_gt
    return total


class _TruthDetector:
    """直接返回隐藏真值的检测器，用于检验评估流程本身"""

    def __init__(self, truth: Dict[str, tuple]):
        self.truth = truth

    def detect_record(self, record, support, params):
        return [det(a.box, 1.0, a.category) for a in self.truth[record.image_id] if a.category == support.category]


def _sampler(category, k):
    return SupportSet(category, (), np.zeros((k, DESCRIPTOR_DIM)))


def _wide_registry() -> CategoryRegistry:
    """四个新类 + 四个基础类，与完整协议相同"""
    specs = [
        (0, CategoryRole.NOVEL, "cube", ShapeArchetype.SQUARE, 0.0),
        (1, CategoryRole.NOVEL, "can", ShapeArchetype.DISC, 0.33),
        (2, CategoryRole.NOVEL, "box", ShapeArchetype.WIDE_RECTANGLE, 0.58),
        (3, CategoryRole.NOVEL, "bottle", ShapeArchetype.TALL_ELLIPSE, 0.8),
        (10, CategoryRole.BASE, "wedge", ShapeArchetype.TRIANGLE, 0.05),
        (11, CategoryRole.BASE, "tape", ShapeArchetype.RING, 0.36),
        (12, CategoryRole.BASE, "clamp", ShapeArchetype.TRIANGLE, 0.62),
        (13, CategoryRole.BASE, "washer", ShapeArchetype.RING, 0.83),
    ]
    return CategoryRegistry([CategoryProfile(CategoryId(i, role, name), shape, hue) for i, role, name, shape, hue in specs])


def _view_sampler(generator: SceneGenerator, detector, seed: int):
    """每个类别采样一个物体实例，取其前 k 张特写作为支持集"""

    def sampler(category, k):
        obj = generator.sample_object(category, np.random.default_rng(seed * 1000 + category.id))
        shots = [
            ImageRecord(
                f"sup-{category.id}-v{v}", generator.render_support_view(obj, v, seed).raster, ImageRole.SUPPORT, category
            )
            for v in range(k)
        ]
        return detector.build_support_set(category, shots)

    return sampler


def _random_instance(rng):
    truth, dets = {"img-0": [], "img-1": []}, {}
    for _ in range(int(rng.integers(1, 4))):
        x, y = rng.integers(0, 20, size=2)
        truth[f"img-{int(rng.integers(2))}"].append(box(x, y, x + rng.integers(4, 12), y + rng.integers(4, 12)))
    for _ in range(int(rng.integers(0, 6))):
        x, y = rng.integers(0, 22, size=2)
        d = det(box(x, y, x + rng.integers(4, 12), y + rng.integers(4, 12)), float(rng.integers(1, 6)) / 5.0)
        dets.setdefault(f"img-{int(rng.integers(2))}", []).append(d)
    return truth, dets


class TestComputeAP(BaseTestCase):
    """COCO 风格 AP"""

    def test_perfect_detector(self):
        truth = {"a": [gt(box(0, 0, 10, 10)), gt(box(20, 20, 40, 40))], "b": [gt(box(5, 5, 15, 15))]}
        dets = {k: [det(a.box, 1.0) for a in v] for k, v in truth.items()}
        assert compute_ap(dets, truth, CUBE) == (pytest.approx(1.0), pytest.approx(1.0))

    def test_no_detections(self):
        assert compute_ap({}, {"a": [gt(box(0, 0, 10, 10))]}, CUBE) == (0.0, 0.0)

    def test_worked_case(self):
        truth = {"a": [gt(box(0, 0, 10, 10))]}
        dets = {"a": [det(box(0, 0, 10, 6), 0.9), det(box(50, 50, 60, 60), 0.8)]}
        assert iou(box(0, 0, 10, 6), box(0, 0, 10, 10)) == pytest.approx(0.6)
        ap, ap50 = compute_ap(dets, truth, CUBE)
        assert ap50 == pytest.approx(1.0, abs=1e-12)
        assert ap == pytest.approx(0.3, abs=1e-12)

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruth):
            compute_ap({"a": [det(box(0, 0, 5, 5), 0.5)]}, {"a": [gt(box(0, 0, 5, 5), CAN)]}, CUBE)

    def test_other_categories_ignored(self):
        truth = {"a": [gt(box(0, 0, 10, 10)), gt(box(30, 30, 40, 40), CAN)]}
        dets = {"a": [det(box(0, 0, 10, 10), 0.9), det(box(30, 30, 40, 40), 0.99, CAN)]}
        assert compute_ap(dets, truth, CUBE)[0] == pytest.approx(1.0)

    def test_duplicate_detection_is_false_positive(self):
        truth = {"a": [gt(box(0, 0, 10, 10))]}
        dets = {"a": [det(box(0, 0, 10, 10), 0.9), det(box(0, 0, 10, 10), 0.8)]}
        assert compute_ap(dets, truth, CUBE)[1] == pytest.approx(1.0)
        dets = {"a": [det(box(0, 0, 10, 10), 0.8), det(box(50, 0, 60, 10), 0.9)]}
        assert compute_ap(dets, truth, CUBE)[1] == pytest.approx(0.5)

    def test_per_image_cap(self):
        truth = {"a": [gt(box(0, 0, 10, 10))]}
        dets = {"a": [det(box(50, 50, 60, 60), 0.9), det(box(0, 0, 10, 10), 0.5)]}
        assert compute_ap(dets, truth, CUBE, max_per_image=1) == (0.0, 0.0)

    def test_equal_thresholds_stay_below_ap50(self):
        truth = {"a": [gt(box(0, 0, 10, 10)), gt(box(20, 0, 30, 10)), gt(box(40, 0, 50, 10))]}
        ap, ap50 = compute_ap({"a": [det(box(0, 0, 10, 10), 0.9)]}, truth, CUBE)
        assert ap <= ap50
        assert ap == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_exact_boxes_give_ap_equal_to_ap50(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            n_gt = int(rng.integers(1, 8))
            truth = {"a": [gt(box(12 * j, 0, 12 * j + 10, 10)) for j in range(n_gt)]}
            hits = rng.permutation(n_gt)[:int(rng.integers(1, n_gt + 1))]
            dets = [det(truth["a"][j].box, float(rng.uniform(0.1, 1.0))) for j in hits]
            dets += [det(box(200 + 12 * j, 0, 210 + 12 * j, 10), float(rng.uniform(0.1, 1.0))) for j in range(int(rng.integers(0, 4)))]
            ap, ap50 = compute_ap({"a": dets}, truth, CUBE)
            assert ap <= ap50
            assert ap == pytest.approx(ap50, abs=1e-12)

    def test_adding_top_scoring_match_never_lowers_ap(self):
        rng = np.random.default_rng(77)
        checked = 0
        for _ in range(400):
            truth, dets = _random_instance(rng)
            free = [
                (image_id, g)
                for image_id, boxes in truth.items()
                for g in boxes
                if all(iou(d.box, g) < 0.5 for d in dets.get(image_id, []))
            ]
            if not free:
                continue
            image_id, g = free[0]
            top = max((d.score for ds in dets.values() for d in ds), default=0.0) + 0.1
            extended = {k: list(v) for k, v in dets.items()}
            extended.setdefault(image_id, []).append(det(g, top))
            before = compute_ap(dets, truth, CUBE)
            after = compute_ap(extended, truth, CUBE)
            assert after[0] >= before[0] - 1e-12
            assert after[1] >= before[1] - 1e-12
            checked += 1
        assert checked >= 50

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            truth, dets = {}, {}
            n_gt = int(rng.integers(1, 4))
            n_det = int(rng.integers(0, 6))
            images = ["img-0", "img-1"]
            for j in range(n_gt):
                x, y = rng.integers(0, 20, size=2)
                truth.setdefault(images[int(rng.integers(2))], []).append(box(x, y, x + rng.integers(4, 12), y + rng.integers(4, 12)))
            for image_id in images:
                truth.setdefault(image_id, [])
            for _ in range(n_det):
                x, y = rng.integers(0, 22, size=2)
                d = det(box(x, y, x + rng.integers(4, 12), y + rng.integers(4, 12)), float(rng.integers(1, 6)) / 5.0)
                dets.setdefault(images[int(rng.integers(2))], []).append(d)
            ap, ap50 = compute_ap(dets, truth, CUBE)
            expected = [_oracle_ap(dets, truth, t) for t in COCO_IOU_THRESHOLDS]
            assert ap50 == pytest.approx(expected[0], abs=1e-12)
            assert ap == pytest.approx(float(np.mean(expected)), abs=1e-12)
            assert 0.0 <= ap <= ap50 <= 1.0


class TestEvaluateModel(BaseTestCase):
    """按类别评估流程"""

    def test_truth_detector_scores_one_and_skips_absent(self):
        truth = {
            "e-0": (gt(box(0, 0, 10, 10)), gt(box(20, 0, 30, 10), CAN)),
            "e-1": (gt(box(5, 5, 25, 25)),),
        }
        dataset = [(make_record(k, category=v[0].category, role=ImageRole.EVAL), v) for k, v in truth.items()]
        params = DetectorParams(np.ones(DESCRIPTOR_DIM), 0.5, 0.15)
        result = evaluate_model(_TruthDetector(truth), params, _sampler, dataset, 3, [CUBE, CAN, TAPE], workers=2)
        assert set(result.per_category) == {CUBE.id, CAN.id}
        assert result.absent == (TAPE.id,)
        assert result.overall_ap == pytest.approx(1.0)
        assert result.n_ground_truth == 3

    def test_no_category_present(self):
        truth = {"e-0": (gt(box(0, 0, 10, 10)),)}
        dataset = [(make_record("e-0", role=ImageRole.EVAL), truth["e-0"])]
        params = DetectorParams(np.ones(DESCRIPTOR_DIM), 0.5, 0.15)
        result = evaluate_model(_TruthDetector(truth), params, _sampler, dataset, 3, [CAN])
        assert result.overall_ap is None and result.overall_ap50 is None
        assert result.absent == (CAN.id,)


class TestPseudoQuality(BaseTestCase):
    """伪标注质量"""

    def test_empty_pseudo_set(self):
        record = make_record("u-0")
        quality = pseudo_quality([(record, ())], lambda _: (gt(box(0, 0, 10, 10)),))
        assert quality.precision is None
        assert (quality.mean_iou, quality.recall, quality.n_pseudo, quality.n_ground_truth) == (0.0, 0.0, 0, 1)

    def test_mixed_quality(self):
        record = make_record("u-0")
        truth = (gt(box(0, 0, 10, 10)), gt(box(20, 0, 30, 10)), gt(box(40, 40, 50, 50), CAN))
        pseudo = (
            Annotation(box(0, 0, 10, 10), CUBE, True, 0.9),
            Annotation(box(20, 0, 25, 10), CUBE, True, 0.7),
        )
        quality = pseudo_quality([(record, pseudo)], lambda _: truth)
        assert quality.mean_iou == pytest.approx(0.75)
        assert quality.precision == pytest.approx(1.0)
        assert quality.recall == pytest.approx(1.0)
        assert quality.n_pseudo == 2 and quality.n_ground_truth == 2

    def test_misplaced_box(self):
        record = make_record("u-0")
        truth = (gt(box(0, 0, 10, 10)),)
        pseudo = (Annotation(box(60, 60, 70, 70), CUBE, True, 0.8),)
        quality = pseudo_quality([(record, pseudo)], lambda _: truth)
        assert quality.mean_iou == 0.0 and quality.precision == 0.0 and quality.recall == 0.0


class TestEvaluateOnScenes(BaseTestCase):
    """在生成的留出集上评估"""

    @pytest.fixture(scope="class")
    def wide_generator(self):
        return SceneGenerator(_wide_registry(), SceneConfig())

    def test_same_inputs_same_result(self, generator, detector):
        registry = generator.registry
        scenes = generator.make_eval_dataset(TableKind.EVAL_SPARSE, 6, registry.novel(), registry.base(), seed=12)
        dataset = eval_images(TableKind.EVAL_SPARSE, scenes)
        params = DetectorParams.initial(detector.config)
        sampler = _view_sampler(generator, detector, 3)
        first = evaluate_model(detector, params, sampler, dataset, 3, registry.novel())
        second = evaluate_model(detector, params, sampler, dataset, 3, registry.novel(), workers=3)
        assert first.to_dict() == second.to_dict()

    def test_zero_weights_collapse_precision(self, wide_generator, detector):
        registry = wide_generator.registry
        scenes = wide_generator.make_eval_dataset(TableKind.EVAL_SPARSE, 100, registry.novel(), registry.base(), seed=19)
        params = DetectorParams(np.zeros(DESCRIPTOR_DIM), 0.5, 0.15)
        dataset = eval_images(TableKind.EVAL_SPARSE, scenes)
        result = evaluate_model(detector, params, _view_sampler(wide_generator, detector, 4), dataset, 3, registry.novel())
        assert result.overall_ap is not None
        assert result.overall_ap < 0.2

    @pytest.mark.slow
    def test_bootstrap_params_favor_base_categories(self, generator, detector):
        registry = generator.registry
        params_0 = bootstrap_pretrain(detector, generator, BootstrapConfig(n_scenes=32), seed=7)
        scenes = generator.make_eval_dataset(TableKind.EVAL_SPARSE, 100, registry.novel(), registry.base(), seed=23)
        dataset = eval_images(TableKind.EVAL_SPARSE, scenes)
        sampler = _view_sampler(generator, detector, 8)
        base = evaluate_model(detector, params_0, sampler, dataset, 3, registry.base())
        novel = evaluate_model(detector, params_0, sampler, dataset, 3, registry.novel())
        assert base.overall_ap >= novel.overall_ap
