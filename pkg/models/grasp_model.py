#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : grasp_model.py
@Time    : 2025/7/4 11:30
@Author  : zhouming
"""
from dataclasses import dataclass
from typing import Tuple

from core.geometry import Annotation, CategoryId
from models.database_model import ImageRecord
from models.scene_model import RenderedScene, SceneSpec


@dataclass(frozen=True)
class PlacementNoise:
    """释放位置估计的噪声模型"""

    center_sigma: float = 2.0
    scale_sigma: float = 0.05

    def __post_init__(self):
        if self.center_sigma < 0 or self.scale_sigma < 0:
            raise ValueError("噪声标准差必须非负")

    @property
    def is_zero(self) -> bool:
        return self.center_sigma == 0 and self.scale_sigma == 0


@dataclass(frozen=True)
class GraspModel:
    """与物体无关的抓取系统 g_θ，抽象为伯努利成功模型"""

    success_probability: float = 0.85
    max_retries: int = 3
    noise: PlacementNoise = PlacementNoise()

    def __post_init__(self):
        if not 0.0 <= self.success_probability <= 1.0:
            raise ValueError(f"抓取成功率必须在[0,1]内: {self.success_probability}")
        if self.max_retries < 0:
            raise ValueError(f"重试次数必须非负: {self.max_retries}")


@dataclass
class Environment:
    """
    环境状态 ζ：N-table（当前轮新类杂乱堆放）与 B-table（稀疏基础物体）

    单一所有者的可变对象，gor_round 会顺序修改它。
    """

    n_spec: SceneSpec
    n_scene: RenderedScene
    b_spec: SceneSpec
    b_scene: RenderedScene
    round_category: CategoryId
    seed: int


@dataclass(frozen=True, eq=False)
class GorResult:
    """一次 Grasp-Observe-Release 交互的采集结果"""

    udo_image: ImageRecord
    support_images: Tuple[ImageRecord, ...]
    moa_image: ImageRecord
    one_shot_label: Annotation
    udo_truth: Tuple[Annotation, ...]
    moa_truth: Tuple[Annotation, ...]
    attempts: int
