#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : detector_model.py
@Time    : 2025/7/7 09:50
@Author  : zhouming
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from core.geometry import Annotation, BBox, CategoryId
from models.database_model import EntrySource, ImageRecord

HIST_BINS = 64
DESCRIPTOR_DIM = HIST_BINS + 1 + 1 + 3
ASPECT_SLICE = slice(HIST_BINS, HIST_BINS + 1)
FILL_SLICE = slice(HIST_BINS + 1, HIST_BINS + 2)
MOMENT_SLICE = slice(HIST_BINS + 2, DESCRIPTOR_DIM)
PARAMS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DetectorConfig:
    """检测头与候选框生成的超参数，均来自配置而非论文"""

    background_band: int = 4
    background_threshold: float = 30.0
    min_component_area: int = 16
    max_single_object_area: int = 1800
    window_scales: Tuple[int, ...] = (24, 40, 64, 96)
    window_aspects: Tuple[float, ...] = (1.0, 0.5, 2.0)
    min_window_fill: float = 0.6
    proposal_nms_iou: float = 0.8
    max_proposals: int = 100
    detect_nms_iou: float = 0.5
    max_detections: int = 100
    positive_iou: float = 0.5
    negative_iou: float = 0.3
    margin: float = 0.15
    negative_weight: float = 1.0
    shot_reduce: str = "max"
    init_tau: float = 0.5
    init_weights: Tuple[float, float, float, float] = (4.0, 2.0, 20.0, 50.0)
    finetune_lr: float = 0.2
    convergence_tol: float = 1e-4
    convergence_patience: int = 5
    max_epochs: int = 200
    anchor_weight: float = 0.05
    prototype_scoring: bool = True
    max_prototypes: int = 96

    def __post_init__(self):
        if self.shot_reduce not in ("max", "mean"):
            raise ValueError(f"shot_reduce 只能为 max 或 mean: {self.shot_reduce}")
        if self.anchor_weight < 0:
            raise ValueError(f"anchor_weight 必须非负: {self.anchor_weight}")
        if self.max_prototypes < 1:
            raise ValueError(f"max_prototypes 至少为1: {self.max_prototypes}")


@dataclass(frozen=True, eq=False)
class DetectorParams:
    """
    f_θ 的参数 θ

    有效度量权重 w = u²，因此任意次更新后都非负。
    """

    u: np.ndarray
    tau: float
    margin: float
    prototypes: Dict[int, np.ndarray] = field(default_factory=dict)
    shot_reduce: str = "max"

    @property
    def weights(self) -> np.ndarray:
        return self.u ** 2

    @classmethod
    def initial(cls, config: DetectorConfig) -> "DetectorParams":
        w_hist, w_aspect, w_fill, w_moment = config.init_weights
        w = np.empty(DESCRIPTOR_DIM, dtype=np.float64)
        w[:HIST_BINS] = w_hist
        w[ASPECT_SLICE] = w_aspect
        w[FILL_SLICE] = w_fill
        w[MOMENT_SLICE] = w_moment
        return cls(np.sqrt(w), float(config.init_tau), float(config.margin), {}, config.shot_reduce)

    def updated(self, u: np.ndarray, tau: float) -> "DetectorParams":
        return replace(self, u=np.array(u, dtype=np.float64), tau=float(tau))

    def with_prototypes(self, prototypes: Dict[int, np.ndarray]) -> "DetectorParams":
        return replace(self, prototypes={k: np.array(v, dtype=np.float64) for k, v in sorted(prototypes.items())})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": PARAMS_SCHEMA_VERSION,
            "u": [float(x) for x in self.u],
            "tau": float(self.tau),
            "margin": float(self.margin),
            "shot_reduce": self.shot_reduce,
            "prototypes": {
                str(k): [[float(x) for x in row] for row in v] for k, v in sorted(self.prototypes.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DetectorParams":
        if data.get("version") != PARAMS_SCHEMA_VERSION:
            raise ValueError(f"不支持的参数版本: {data.get('version')}")
        u = np.asarray(data["u"], dtype=np.float64)
        if u.shape != (DESCRIPTOR_DIM,):
            raise ValueError(f"u 维度应为 {DESCRIPTOR_DIM}，实际 {u.shape}")
        prototypes = {
            int(k): np.asarray(v, dtype=np.float64).reshape(-1, DESCRIPTOR_DIM) for k, v in data["prototypes"].items()
        }
        return cls(u, float(data["tau"]), float(data["margin"]), prototypes, data.get("shot_reduce", "max"))


@dataclass(frozen=True, eq=False)
class SupportSet:
    """k-shot 支持集 S，所有支持图像同属一个类别"""

    category: CategoryId
    shots: Tuple[ImageRecord, ...]
    descriptors: np.ndarray

    def __post_init__(self):
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] < 1:
            raise ValueError("支持集至少需要一个样本")
        if any(s.category != self.category for s in self.shots):
            raise ValueError("支持集中的图像必须同属一个类别")

    @property
    def k(self) -> int:
        return int(self.descriptors.shape[0])

    @property
    def key(self) -> Tuple[str, ...]:
        return tuple(s.image_id for s in self.shots)


@dataclass(frozen=True, eq=False)
class MetaTask:
    """元学习任务 T = (x, S, z)，正样本只保留与支持集同类的标注"""

    query: ImageRecord
    support: SupportSet
    positives: Tuple[Annotation, ...]
    source: EntrySource = EntrySource.MOA

    def __post_init__(self):
        if any(a.category != self.support.category for a in self.positives):
            raise ValueError("任务正样本的类别必须与支持集一致")

    @property
    def sort_key(self) -> Tuple:
        return self.query.image_id, self.support.category.id, self.support.key


@dataclass(frozen=True, eq=False)
class ProposalFeatures:
    """一张图像的候选框及其描述子（与参数无关，可缓存）"""

    boxes: Tuple[BBox, ...]
    descriptors: np.ndarray

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True, eq=False)
class TaskFeatures:
    """任务的预计算特征：正/负候选描述子和支持描述子"""

    positives: np.ndarray
    negatives: np.ndarray
    shots: np.ndarray
    key: Tuple = ()


@dataclass
class FineTuneTrace:
    """微调过程记录"""

    losses: List[float] = field(default_factory=list)
    steps: int = 0
    skipped_tasks: int = 0
    converged: bool = False


def stack_descriptors(rows: Sequence[np.ndarray]) -> np.ndarray:
    if not rows:
        return np.zeros((0, DESCRIPTOR_DIM), dtype=np.float64)
    return np.vstack(rows).astype(np.float64)
