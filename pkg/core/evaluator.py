#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : evaluator.py
@Time    : 2025/7/9 14:00
@Author  : zhouming
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from core.detector import FewShotDetector
from core.exceptions import NoGroundTruth
from core.geometry import Annotation, BBox, CategoryId, Detection, boxes_to_array, iou, iou_matrix
from models.database_model import ImageRecord
from models.detector_model import DetectorParams, SupportSet
from models.metrics_model import COCO_IOU_THRESHOLDS, CategoryAP, EvalResult, PseudoQuality
from models.scene_model import RenderedScene

SupportSampler = Callable[[CategoryId, int], SupportSet]
EvalImage = Tuple[ImageRecord, Tuple[Annotation, ...]]
MAX_DETECTIONS_PER_IMAGE = 100


def _gt_boxes(items: Iterable[Union[Annotation, BBox]], category: CategoryId) -> List[BBox]:
    boxes = []
    for item in items:
        if isinstance(item, Annotation):
            if item.category == category:
                boxes.append(item.box)
        else:
            boxes.append(item)
    return boxes


def _average_precision(tp: np.ndarray, n_gt: int) -> float:
    """全点插值：精确率取右侧包络后对召回率积分"""
    if tp.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    recall = tp_cum / float(n_gt)
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def compute_ap(
    detections: Mapping[str, Sequence[Detection]],
    ground_truth: Mapping[str, Sequence[Union[Annotation, BBox]]],
    category: CategoryId,
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    max_per_image: int = MAX_DETECTIONS_PER_IMAGE,
) -> Tuple[float, float]:
    """
    COCO 风格的 AP 与 AP50

    每个阈值下按分数降序贪心匹配（同分按图像ID、框坐标字典序），每个真值至多匹配一次，
    匹配要求 IoU ≥ 阈值；AP 为各阈值 AP 的均值。

    Args:
        detections: 图像ID → 检测结果
        ground_truth: 图像ID → 真值（Annotation 会按类别过滤）
        category: 评估类别
        iou_thresholds: IoU 阈值序列
        max_per_image: 每张图像最多计入的检测数

    Returns:
        Tuple[float, float]: (AP, AP50)

    Raises:
        NoGroundTruth: 该类别没有任何真值
    """
    gts = {image_id: _gt_boxes(items, category) for image_id, items in ground_truth.items()}
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise NoGroundTruth(f"类别 {category.name or category.id} 没有真值")

    flat = []
    for image_id, dets in detections.items():
        own = sorted((d for d in dets if d.category == category), key=lambda d: (-d.score, d.box.sort_key()))
        flat.extend((d.score, image_id, d.box) for d in own[:max_per_image])
    flat.sort(key=lambda item: (-item[0], item[1], item[2].sort_key()))

    def ap_at(threshold: float) -> float:
        matched = {image_id: [False] * len(boxes) for image_id, boxes in gts.items()}
        tp = np.zeros(len(flat), dtype=bool)
        for i, (_, image_id, box) in enumerate(flat):
            best_j, best_iou = -1, threshold
            for j, gt in enumerate(gts.get(image_id, ())):
                if matched[image_id][j]:
                    continue
                overlap = iou(box, gt)
                if overlap >= best_iou and (best_j < 0 or overlap > best_iou):
                    best_j, best_iou = j, overlap
            if best_j >= 0:
                matched[image_id][best_j] = True
                tp[i] = True
        return _average_precision(tp, n_gt)

    per_threshold = {t: ap_at(t) for t in iou_thresholds}
    ap50 = per_threshold[0.5] if 0.5 in per_threshold else ap_at(0.5)
    # fsum 避免等值求均值时多出 1 ulp；AP 不得超过 AP50
    ap = math.fsum(per_threshold.values()) / len(per_threshold)
    return min(ap, ap50), ap50


def _map_ordered(fn, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate_model(
    detector: FewShotDetector,
    params: DetectorParams,
    support_sampler: SupportSampler,
    dataset: Sequence[EvalImage],
    k: int,
    categories: Sequence[CategoryId],
    workers: int = 1,
) -> EvalResult:
    """
    在留出集上按类别评估 f_θ

    Args:
        detector: 检测器
        params: 检测器参数
        support_sampler: (类别, k) → 支持集
        dataset: (图像记录, 隐藏真值) 序列
        k: 每个类别的支持样本数
        categories: 待评估类别
        workers: 并行线程数，结果按输入顺序归约

    Returns:
        EvalResult: 评估结果
    """
    per_category: Dict[int, CategoryAP] = {}
    absent = []
    n_det_total, n_gt_total = 0, 0
    for category in sorted(categories, key=lambda c: c.id):
        support = support_sampler(category, k)
        outputs = _map_ordered(lambda item: detector.detect_record(item[0], support, params), dataset, workers)
        detections = {record.image_id: dets for (record, _), dets in zip(dataset, outputs)}
        truth = {record.image_id: gts for record, gts in dataset}
        try:
            ap, ap50 = compute_ap(detections, truth, category)
        except NoGroundTruth:
            absent.append(category.id)
            continue
        n_det = sum(min(len(d), MAX_DETECTIONS_PER_IMAGE) for d in detections.values())
        n_gt = sum(1 for gts in truth.values() for a in gts if a.category == category)
        per_category[category.id] = CategoryAP(category.id, category.name, ap, ap50, n_det, n_gt)
        n_det_total += n_det
        n_gt_total += n_gt

    if per_category:
        overall_ap = math.fsum(c.ap for c in per_category.values()) / len(per_category)
        overall_ap50 = math.fsum(c.ap50 for c in per_category.values()) / len(per_category)
    else:
        overall_ap = overall_ap50 = None
    return EvalResult(per_category, overall_ap, overall_ap50, n_det_total, n_gt_total, tuple(absent))


def pseudo_quality(
    d_pseudo: Sequence[Tuple[ImageRecord, Sequence[Annotation]]],
    hidden_truth: Callable[[str], Sequence[Annotation]],
) -> PseudoQuality:
    """
    伪标注与隐藏真值的比对（仅评估使用）

    每个伪框与同类真值取最佳 IoU；精确率为最佳 IoU ≥ 0.5 的伪框比例，
    召回率为被某个伪框以 IoU ≥ 0.5 覆盖的真值比例（真值取该 UDO 图像所属轮次类别）。
    """
    best_ious: List[float] = []
    covered, n_gt = 0, 0
    for record, annotations in d_pseudo:
        truth = list(hidden_truth(record.image_id))
        for ann in annotations:
            same = [t.box for t in truth if t.category == ann.category]
            best_ious.append(max((iou(ann.box, b) for b in same), default=0.0))
        round_truth = [t.box for t in truth if t.category == record.category]
        n_gt += len(round_truth)
        own = [a.box for a in annotations if a.category == record.category]
        if round_truth and own:
            overlaps = iou_matrix(boxes_to_array(round_truth), boxes_to_array(own))
            covered += int((overlaps.max(axis=1) >= 0.5).sum())

    if not best_ious:
        return PseudoQuality(0.0, None, 0.0, 0, n_gt)
    ious = np.asarray(best_ious)
    return PseudoQuality(
        mean_iou=float(ious.mean()),
        precision=float((ious >= 0.5).mean()),
        recall=covered / n_gt if n_gt else 0.0,
        n_pseudo=len(best_ious),
        n_ground_truth=n_gt,
    )


def proposal_recall(
    detector: FewShotDetector, scenes: Sequence[RenderedScene], iou_threshold: float = 0.5
) -> float:
    """候选框对隐藏真值的召回率"""
    covered, total = 0, 0
    for scene in scenes:
        boxes = detector.propose(scene.raster)
        truth = [a.box for a in scene.ground_truth]
        total += len(truth)
        if boxes and truth:
            overlaps = iou_matrix(boxes_to_array(truth), boxes_to_array(boxes))
            covered += int((overlaps.max(axis=1) >= iou_threshold).sum())
    recall = covered / total if total else 0.0
    logger.debug(f"候选框召回率 {recall:.3f} ({covered}/{total})")
    return recall
