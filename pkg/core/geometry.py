#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : geometry.py
@Time    : 2025/7/2 10:30
@Author  : zhouming
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import NoOverlap


class CategoryRole(str, Enum):
    """类别角色：基础类（预训练可见）或新类（阶段性引入）"""

    BASE = "base"
    NOVEL = "novel"


@dataclass(frozen=True)
class BBox:
    """轴对齐像素框，坐标连续，max 边为开区间"""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"框坐标必须有限: {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"框坐标非法: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def to_list(self) -> List[float]:
        return [float(self.x_min), float(self.y_min), float(self.x_max), float(self.y_max)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError(f"框需要4个坐标，实际 {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BBox":
        return cls(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> Optional["BBox"]:
        """掩码像素的紧致外接框；空掩码返回 None"""
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            return None
        return cls(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))

    def sort_key(self) -> Tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max


@dataclass(frozen=True)
class CategoryId:
    """类别标识，角色在注册时固定"""

    id: int
    role: CategoryRole
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"类别ID必须非负: {self.id}")

    @property
    def is_novel(self) -> bool:
        return self.role == CategoryRole.NOVEL


@dataclass(frozen=True)
class Annotation:
    """框标注：真值、机器人估计的一次性标注或伪标注"""

    box: BBox
    category: CategoryId
    is_pseudo: bool = False
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"置信度超出[0,1]: {self.confidence}")
        if not self.is_pseudo and self.confidence != 1.0:
            raise ValueError("非伪标注的置信度必须为1")

    @classmethod
    def pseudo(cls, detection: "Detection") -> "Annotation":
        return cls(detection.box, detection.category, True, float(detection.score))


@dataclass(frozen=True)
class Detection:
    """f_θ(x|S) 的单个输出"""

    box: BBox
    score: float
    category: CategoryId

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"检测分数必须有限: {self.score}")


def iou(a: BBox, b: BBox) -> float:
    """
    计算两个框的交并比

    Args:
        a: 框A
        b: 框B

    Returns:
        float: [0,1] 之间的 IoU，不相交时为 0
    """
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """
    批量 IoU，输入为 (n,4)/(m,4) 的 [x_min,y_min,x_max,y_max] 数组

    Returns:
        np.ndarray: (n,m) IoU 矩阵
    """
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    xx1 = np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    yy1 = np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    xx2 = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2])
    yy2 = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3])
    inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    rows = [b.to_list() for b in boxes]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def _nms_order_key(det: Detection) -> Tuple:
    return (-det.score, det.box.x_min, det.box.y_min, det.box.x_max, det.box.y_max, det.category.id)


def nms(detections: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """
    按类别的贪心非极大值抑制

    分数降序处理，同分时 x_min、y_min 较小者优先；不同类别之间互不抑制。

    Args:
        detections: 检测结果
        iou_threshold: 抑制阈值，取值 (0,1]

    Returns:
        List[Detection]: 保留的检测，按处理顺序排列
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"NMS阈值必须在(0,1]内: {iou_threshold}")

    kept: List[Detection] = []
    kept_by_category: Dict[CategoryId, List[BBox]] = {}
    for det in sorted(detections, key=_nms_order_key):
        same_category = kept_by_category.setdefault(det.category, [])
        if all(iou(det.box, other) < iou_threshold for other in same_category):
            kept.append(det)
            same_category.append(det.box)
    return kept


def clip_to_image(box: BBox, width: float, height: float) -> BBox:
    """
    将框裁剪到图像矩形 [0,width]×[0,height]

    Raises:
        NoOverlap: 框完全位于图像之外
    """
    x_min, y_min = max(box.x_min, 0.0), max(box.y_min, 0.0)
    x_max, y_max = min(box.x_max, float(width)), min(box.y_max, float(height))
    if x_min >= x_max or y_min >= y_max:
        raise NoOverlap(f"框 {box.to_list()} 与 {width}x{height} 图像不相交")
    return BBox(x_min, y_min, x_max, y_max)
