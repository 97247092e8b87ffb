#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : detector.py
@Time    : 2025/7/7 14:30
@Author  : zhouming
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import ndimage

from core.exceptions import DegenerateTask
from core.geometry import BBox, CategoryId, Detection, boxes_to_array, iou_matrix, nms
from models.database_model import ImageRecord
from models.detector_model import (
    DESCRIPTOR_DIM,
    HIST_BINS,
    DetectorConfig,
    DetectorParams,
    FineTuneTrace,
    MetaTask,
    ProposalFeatures,
    SupportSet,
    TaskFeatures,
    stack_descriptors,
)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_LOSS_CHUNK_ROWS = 8192


class FineTuneMode(str, Enum):
    UNTIL_CONVERGENCE = "until-convergence"
    FIXED_STEPS = "fixed-steps"


@dataclass(frozen=True, eq=False)
class ImageAnalysis:
    """背景估计、前景掩码和颜色分箱，一张图像只计算一次"""

    image: np.ndarray
    background: np.ndarray
    foreground: np.ndarray
    bins: np.ndarray


def estimate_background(image: np.ndarray, band: int) -> np.ndarray:
    """取图像边框带的众数颜色（按 8 级量化统计，返回众数箱内像素均值）"""
    h, w = image.shape[:2]
    band = max(1, min(band, h // 2, w // 2))
    border = np.concatenate(
        [
            image[:band].reshape(-1, 3),
            image[h - band:].reshape(-1, 3),
            image[band:h - band, :band].reshape(-1, 3),
            image[band:h - band, w - band:].reshape(-1, 3),
        ]
    )
    q = (border >> 3).astype(np.int32)
    keys = q[:, 0] * 1024 + q[:, 1] * 32 + q[:, 2]
    values, counts = np.unique(keys, return_counts=True)
    mode = values[int(np.argmax(counts))]
    return border[keys == mode].astype(np.float64).mean(axis=0)


def analyze(image: np.ndarray, config: DetectorConfig) -> ImageAnalysis:
    if image.size == 0:
        raise ValueError("图像为空")
    background = estimate_background(image, config.background_band)
    diff = image.astype(np.float64) - background
    foreground = np.sqrt((diff ** 2).sum(axis=2)) > config.background_threshold
    q = (image >> 6).astype(np.int16)
    bins = q[..., 0] * 16 + q[..., 1] * 4 + q[..., 2]
    bins[~foreground] = -1
    return ImageAnalysis(image, background, foreground, bins)


def _crop_slices(box: BBox, width: int, height: int) -> Tuple[slice, slice]:
    x0 = min(max(int(math.floor(box.x_min)), 0), width - 1)
    y0 = min(max(int(math.floor(box.y_min)), 0), height - 1)
    x1 = max(min(int(math.ceil(box.x_max)), width), x0 + 1)
    y1 = max(min(int(math.ceil(box.y_max)), height), y0 + 1)
    return slice(y0, y1), slice(x0, x1)


def describe(analysis: ImageAnalysis, box: BBox) -> np.ndarray:
    """
    计算框内区域的描述子

    64 维联合 RGB 直方图（前景像素 L1 归一化）⊕ 对数宽高比 ⊕ 前景填充率 ⊕ 3 个归一化二阶中心矩
    """
    height, width = analysis.foreground.shape
    rows, cols = _crop_slices(box, width, height)
    fg = analysis.foreground[rows, cols]
    desc = np.zeros(DESCRIPTOR_DIM, dtype=np.float64)
    n_fg = int(fg.sum())
    desc[HIST_BINS] = float(np.clip(math.log(box.width / box.height), -1.4, 1.4))
    desc[HIST_BINS + 1] = n_fg / fg.size
    if n_fg == 0:
        return desc
    desc[:HIST_BINS] = np.bincount(analysis.bins[rows, cols][fg], minlength=HIST_BINS)[:HIST_BINS] / n_fg
    ys, xs = np.nonzero(fg)
    u = (xs + 0.5) / fg.shape[1]
    v = (ys + 0.5) / fg.shape[0]
    du, dv = u - u.mean(), v - v.mean()
    # 乘 12 使填满的矩形取值 (1, 1, 0)
    desc[HIST_BINS + 2] = 12.0 * float(np.mean(du * du))
    desc[HIST_BINS + 3] = 12.0 * float(np.mean(dv * dv))
    desc[HIST_BINS + 4] = 12.0 * float(np.mean(du * dv))
    return desc


def _components(mask: np.ndarray, min_area: int) -> List[Tuple[List[int], int]]:
    labels, _ = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    found = []
    for index, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        area = int((labels[sl] == index).sum())
        if area >= min_area:
            found.append(([sl[1].start, sl[0].start, sl[1].stop, sl[0].stop], area))
    return found


def _sliding_windows(
    integral: np.ndarray, region: Sequence[int], config: DetectorConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """在大连通域内滑窗，按前景填充率打分"""
    height, width = integral.shape[0] - 1, integral.shape[1] - 1
    x0, y0, x1, y1 = region
    all_boxes, all_fill = [], []
    for scale in config.window_scales:
        stride = max(1, scale // 4)
        for aspect in config.window_aspects:
            ww = max(4, int(round(scale * math.sqrt(aspect))))
            hh = max(4, int(round(scale / math.sqrt(aspect))))
            if ww > width or hh > height:
                continue
            xs = np.arange(x0, max(x0, min(x1, width) - ww) + 1, stride)
            ys = np.arange(y0, max(y0, min(y1, height) - hh) + 1, stride)
            xs = xs[xs + ww <= width]
            ys = ys[ys + hh <= height]
            if xs.size == 0 or ys.size == 0:
                continue
            gx, gy = np.meshgrid(xs, ys)
            gx, gy = gx.ravel(), gy.ravel()
            total = integral[gy + hh, gx + ww] - integral[gy, gx + ww] - integral[gy + hh, gx] + integral[gy, gx]
            fill = total / float(ww * hh)
            keep = fill >= config.min_window_fill
            if keep.any():
                all_boxes.append(np.stack([gx[keep], gy[keep], gx[keep] + ww, gy[keep] + hh], axis=1))
                all_fill.append(fill[keep])
    if not all_boxes:
        return np.zeros((0, 4)), np.zeros(0)
    return np.vstack(all_boxes).astype(np.float64), np.concatenate(all_fill)


def _greedy_nms(boxes: np.ndarray, priority: np.ndarray, threshold: float, limit: int) -> List[int]:
    """类别无关的贪心 NMS，按优先级降序、坐标字典序打破平局"""
    order = np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -priority))
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    keep: List[int] = []
    while order.size > 0 and len(keep) < limit:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        xx1 = np.maximum(boxes[i, 0], boxes[rest, 0])
        yy1 = np.maximum(boxes[i, 1], boxes[rest, 1])
        xx2 = np.minimum(boxes[i, 2], boxes[rest, 2])
        yy2 = np.minimum(boxes[i, 3], boxes[rest, 3])
        inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
        overlap = inter / (areas[i] + areas[rest] - inter)
        order = rest[overlap < threshold]
    return keep


def score_matrix(descriptors: np.ndarray, shots: np.ndarray, params: DetectorParams) -> np.ndarray:
    """批量打分：每个候选对支持样本取 exp(-Σ w (c-s)²) 后按 shot_reduce 聚合"""
    if descriptors.shape[0] == 0:
        return np.zeros(0)
    gaps2 = (descriptors[:, None, :] - shots[None, :, :]) ** 2
    similarity = np.exp(-(gaps2 @ params.weights))
    if params.shot_reduce == "mean":
        return similarity.mean(axis=1)
    return similarity.max(axis=1)


class _LossBatch:
    """按任务排序后拼接的全批量损失计算，分块归约保证结果确定"""

    def __init__(self, features: Sequence[TaskFeatures], negative_weight: float):
        rows, task_idx, is_pos, coef = [], [], [], []
        k_max = max(f.shots.shape[0] for f in features)
        self.shots = np.zeros((len(features), k_max, DESCRIPTOR_DIM))
        self.shot_mask = np.zeros((len(features), k_max), dtype=bool)
        for i, f in enumerate(features):
            k = f.shots.shape[0]
            self.shots[i, :k] = f.shots
            self.shot_mask[i, :k] = True
            for group, positive, weight in ((f.positives, True, 1.0), (f.negatives, False, negative_weight)):
                n = group.shape[0]
                if n == 0:
                    continue
                rows.append(group)
                task_idx.append(np.full(n, i))
                is_pos.append(np.full(n, positive))
                coef.append(np.full(n, weight / n))
        self.n_tasks = len(features)
        self.rows = stack_descriptors(rows)
        self.task_idx = np.concatenate(task_idx) if task_idx else np.zeros(0, dtype=int)
        self.is_pos = np.concatenate(is_pos) if is_pos else np.zeros(0, dtype=bool)
        self.coef = np.concatenate(coef) if coef else np.zeros(0)

    def evaluate(self, params: DetectorParams) -> Tuple[float, np.ndarray, float]:
        loss, grad_u, grad_tau = 0.0, np.zeros(DESCRIPTOR_DIM), 0.0
        w, u = params.weights, params.u
        for start in range(0, self.rows.shape[0], _LOSS_CHUNK_ROWS):
            sl = slice(start, start + _LOSS_CHUNK_ROWS)
            rows, tasks = self.rows[sl], self.task_idx[sl]
            shots, mask = self.shots[tasks], self.shot_mask[tasks]
            gaps2 = (rows[:, None, :] - shots) ** 2
            similarity = np.exp(-(gaps2 @ w))
            if params.shot_reduce == "mean":
                weights = similarity * mask
                counts = mask.sum(axis=1)
                s = weights.sum(axis=1) / counts
                ds_du = -2.0 * u * np.einsum("rk,rkd->rd", weights, gaps2) / counts[:, None]
            else:
                best = np.argmax(np.where(mask, similarity, -1.0), axis=1)
                picked = np.arange(rows.shape[0])
                s = similarity[picked, best]
                ds_du = -2.0 * u * s[:, None] * gaps2[picked, best]
            is_pos, coef = self.is_pos[sl], self.coef[sl]
            hinge = np.where(is_pos, params.tau + params.margin - s, s - params.tau + params.margin)
            active = hinge > 0
            loss += float(np.sum(coef * hinge * active))
            sign = np.where(is_pos, -1.0, 1.0)
            dl_ds = coef * sign * active
            grad_tau += float(np.sum(-dl_ds))
            grad_u += dl_ds @ ds_du
        n = float(self.n_tasks)
        return loss / n, grad_u / n, grad_tau / n


class FewShotDetector:
    """
    支持集条件下的少样本检测器 f_θ

    候选框生成与描述子与参数无关，按图像ID缓存；打分头是可学习的对角度量。
    """

    def __init__(self, config: Optional[DetectorConfig] = None):
        """
        初始化检测器

        Args:
            config: 检测头超参数
        """
        self.config = config or DetectorConfig()
        self._features: Dict[str, ProposalFeatures] = {}
        self._support_descriptors: Dict[str, np.ndarray] = {}

    def clear_cache(self) -> None:
        self._features.clear()
        self._support_descriptors.clear()

    # ---------- 候选框与描述子 ----------

    def _propose_boxes(self, analysis: ImageAnalysis) -> List[BBox]:
        cfg = self.config
        fg = analysis.foreground
        if not fg.any():
            return []
        boxes, priority, large = [], [], []
        for box, area in _components(fg, cfg.min_component_area):
            boxes.append(box)
            priority.append(1.0 + area / float((box[2] - box[0]) * (box[3] - box[1])))
            if area > cfg.max_single_object_area:
                large.append(box)
        for value in np.unique(analysis.bins[fg]):
            for box, area in _components(analysis.bins == value, cfg.min_component_area):
                boxes.append(box)
                priority.append(1.0 + area / float((box[2] - box[0]) * (box[3] - box[1])))
        box_arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        prio_arr = np.asarray(priority, dtype=np.float64)
        if large:
            integral = np.pad(fg.astype(np.int64).cumsum(axis=0).cumsum(axis=1), ((1, 0), (1, 0)))
            for region in large:
                w_boxes, w_fill = _sliding_windows(integral, region, cfg)
                box_arr = np.vstack([box_arr, w_boxes])
                prio_arr = np.concatenate([prio_arr, w_fill])
        if box_arr.shape[0] == 0:
            return []
        keep = _greedy_nms(box_arr, prio_arr, cfg.proposal_nms_iou, cfg.max_proposals)
        return [BBox.from_list(box_arr[i]) for i in keep]

    def propose(self, image: np.ndarray) -> List[BBox]:
        """
        类别无关的候选框

        (a) 边框带众数颜色估计背景；(b) 与背景距离超过阈值的像素为前景；
        (c) 前景及各颜色箱子掩码的连通域作为种子框；(d) 过大的连通域额外做多尺度滑窗；
        (e) IoU 0.8 的类别无关 NMS，并截断到 max_proposals（种子框优先，其次按填充率）。
        """
        return self._propose_boxes(analyze(image, self.config))

    def embed(self, image: np.ndarray, box: BBox) -> np.ndarray:
        """计算图像中框区域的确定性描述子"""
        return describe(analyze(image, self.config), box)

    def support_descriptor(self, image: np.ndarray) -> np.ndarray:
        """支持视图在前景紧致框上的描述子；无前景时使用整幅图像"""
        analysis = analyze(image, self.config)
        box = BBox.from_mask(analysis.foreground)
        if box is None:
            box = BBox(0.0, 0.0, float(image.shape[1]), float(image.shape[0]))
        return describe(analysis, box)

    def proposal_features(self, image: np.ndarray) -> ProposalFeatures:
        analysis = analyze(image, self.config)
        boxes = self._propose_boxes(analysis)
        return ProposalFeatures(tuple(boxes), stack_descriptors([describe(analysis, b) for b in boxes]))

    def features_for(self, record: ImageRecord) -> ProposalFeatures:
        cached = self._features.get(record.image_id)
        if cached is None:
            cached = self.proposal_features(record.raster)
            self._features[record.image_id] = cached
        return cached

    def build_support_set(self, category: CategoryId, shots: Sequence[ImageRecord]) -> SupportSet:
        """由支持图像构造支持集，描述子按图像ID缓存"""
        rows = []
        for record in shots:
            desc = self._support_descriptors.get(record.image_id)
            if desc is None:
                desc = self.support_descriptor(record.raster)
                self._support_descriptors[record.image_id] = desc
            rows.append(desc)
        return SupportSet(category, tuple(shots), stack_descriptors(rows))

    # ---------- 打分与检测 ----------

    @staticmethod
    def score(candidate: np.ndarray, support: SupportSet, params: DetectorParams) -> float:
        """
        候选描述子对支持集的相似度

        Returns:
            float: max_j exp(-Σ_d w_d (c_d - s_jd)²)，取值 [0,1]
        """
        if candidate.shape[-1] != support.descriptors.shape[1]:
            raise ValueError(f"描述子维度不一致: {candidate.shape[-1]} vs {support.descriptors.shape[1]}")
        return float(score_matrix(candidate.reshape(1, -1), support.descriptors, params)[0])

    def conditioning_shots(self, support: SupportSet, params: DetectorParams) -> np.ndarray:
        """
        推理时的条件样本：支持描述子，开启 prototype_scoring 时并入该类别原型库的最近 max_prototypes 行

        原型库按支持图像ID排序，末尾即最近采集的视图；重复行只保留一份。
        """
        bank = params.prototypes.get(support.category.id) if self.config.prototype_scoring else None
        if bank is None or bank.shape[0] == 0:
            return support.descriptors
        return np.unique(np.vstack([support.descriptors, bank[-self.config.max_prototypes:]]), axis=0)

    def detect_features(
        self, features: ProposalFeatures, support: SupportSet, params: DetectorParams
    ) -> List[Detection]:
        scores = score_matrix(features.descriptors, self.conditioning_shots(support, params), params)
        detections = [
            Detection(box, float(min(max(s, 0.0), 1.0)), support.category)
            for box, s in zip(features.boxes, scores)
            if s > params.tau
        ]
        kept = nms(detections, self.config.detect_nms_iou)
        return kept[:self.config.max_detections]

    def detect(self, image: np.ndarray, support: SupportSet, params: DetectorParams) -> List[Detection]:
        """
        f_θ(x|S)：候选框 → 描述子 → 打分，保留分数高于 τ 的框并做 IoU 0.5 的按类 NMS

        检测框均来自候选框，检测头不回归框。打分对象见 conditioning_shots。
        """
        return self.detect_features(self.proposal_features(image), support, params)

    def detect_record(self, record: ImageRecord, support: SupportSet, params: DetectorParams) -> List[Detection]:
        return self.detect_features(self.features_for(record), support, params)

    # ---------- 训练 ----------

    def prepare_task(self, task: MetaTask) -> TaskFeatures:
        """
        将任务的候选框划分为正样本（与某个正标注 IoU ≥ 0.5）和负样本（与全部正标注 IoU ≤ 0.3）

        Raises:
            DegenerateTask: 查询图像没有候选框
        """
        features = self.features_for(task.query)
        if len(features) == 0:
            raise DegenerateTask(f"查询图像 {task.query.image_id} 没有候选框")
        if task.positives:
            overlaps = iou_matrix(boxes_to_array(features.boxes), boxes_to_array(a.box for a in task.positives))
            best = overlaps.max(axis=1)
        else:
            best = np.zeros(len(features))
        positives = features.descriptors[best >= self.config.positive_iou]
        negatives = features.descriptors[best <= self.config.negative_iou]
        return TaskFeatures(positives, negatives, task.support.descriptors, task.sort_key)

    def features_loss(
        self, params: DetectorParams, features: Sequence[TaskFeatures]
    ) -> Tuple[float, np.ndarray, float]:
        """对一组预计算任务的平均损失及其对 (u, τ) 的精确（次）梯度"""
        ordered = sorted(features, key=lambda f: f.key)
        return _LossBatch(ordered, self.config.negative_weight).evaluate(params)

    def task_loss(self, params: DetectorParams, task: MetaTask) -> Tuple[float, np.ndarray, float]:
        """
        单任务铰链损失

        loss = mean_pos max(0, τ+m−s) + λ·mean_neg max(0, s−τ+m)，铰链拐点处次梯度取 0。

        Returns:
            Tuple[float, np.ndarray, float]: 损失、对 u 的梯度、对 τ 的梯度
        """
        return self.features_loss(params, [self.prepare_task(task)])

    def _prototypes_from(self, params: DetectorParams, tasks: Iterable[MetaTask]) -> Dict[int, np.ndarray]:
        prototypes = dict(params.prototypes)
        collected: Dict[int, Dict[str, np.ndarray]] = {}
        for task in tasks:
            bucket = collected.setdefault(task.support.category.id, {})
            for record, desc in zip(task.support.shots, task.support.descriptors):
                bucket.setdefault(record.image_id, desc)
        for category_id, bucket in collected.items():
            prototypes[category_id] = stack_descriptors([bucket[k] for k in sorted(bucket)])
        return prototypes

    def fine_tune(
        self,
        init: DetectorParams,
        tasks: Sequence[MetaTask],
        lr: float,
        mode: FineTuneMode = FineTuneMode.UNTIL_CONVERGENCE,
        steps: int = 0,
        trace: Optional[FineTuneTrace] = None,
    ) -> DetectorParams:
        """
        全批量梯度下降微调

        Args:
            init: 初始参数
            tasks: 任务集
            lr: 学习率
            mode: until-convergence（连续 patience 轮改善 < tol 或达到 max_epochs 停止）或 fixed-steps
            steps: fixed-steps 模式下的步数 L
            trace: 可选的过程记录

        Returns:
            DetectorParams: 微调后的参数，原型库由任务的支持描述子重建
        """
        if not tasks:
            raise ValueError("任务集不能为空")
        if lr <= 0:
            raise ValueError(f"学习率必须为正: {lr}")
        mode = FineTuneMode(mode)
        trace = trace if trace is not None else FineTuneTrace()
        if mode == FineTuneMode.FIXED_STEPS and steps == 0:
            return init

        ordered = sorted(tasks, key=lambda t: t.sort_key)
        features = []
        for task in ordered:
            try:
                features.append(self.prepare_task(task))
            except DegenerateTask as e:
                trace.skipped_tasks += 1
                logger.warning(f"跳过退化任务: {e}")
        params = init
        if features:
            batch = _LossBatch(features, self.config.negative_weight)
            rho = self.config.anchor_weight

            def objective(current: DetectorParams) -> Tuple[float, np.ndarray, float]:
                # 铰链损失 + ρ/2·(‖u−u0‖² + (τ−τ0)²)，把参数拉向本次微调的起点
                loss, grad_u, grad_tau = batch.evaluate(current)
                du, dtau = current.u - init.u, current.tau - init.tau
                loss += 0.5 * rho * (float(du @ du) + dtau * dtau)
                return loss, grad_u + rho * du, grad_tau + rho * dtau

            if mode == FineTuneMode.FIXED_STEPS:
                for _ in range(steps):
                    loss, grad_u, grad_tau = objective(params)
                    trace.losses.append(loss)
                    params = params.updated(params.u - lr * grad_u, params.tau - lr * grad_tau)
                    trace.steps += 1
            else:
                stall, previous = 0, None
                for _ in range(self.config.max_epochs):
                    loss, grad_u, grad_tau = objective(params)
                    trace.losses.append(loss)
                    if previous is not None:
                        stall = stall + 1 if previous - loss < self.config.convergence_tol else 0
                        if stall >= self.config.convergence_patience:
                            trace.converged = True
                            break
                    params = params.updated(params.u - lr * grad_u, params.tau - lr * grad_tau)
                    trace.steps += 1
                    previous = loss
            logger.debug(
                f"微调完成: 模式 {mode.value}, 任务 {len(features)}, 步数 {trace.steps}, "
                f"损失 {trace.losses[0]:.4f} -> {trace.losses[-1]:.4f}"
            )
        return params.with_prototypes(self._prototypes_from(init, ordered))
