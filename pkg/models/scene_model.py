#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : scene_model.py
@Time    : 2025/7/2 15:20
@Author  : zhouming
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from core.geometry import Annotation, CategoryId, CategoryRole

RGB = Tuple[int, int, int]


class TableKind(str, Enum):
    """场景类型"""

    N_TABLE = "n-table"
    B_TABLE = "b-table"
    EVAL_SPARSE = "eval-sparse"
    EVAL_DENSE = "eval-dense"

    @property
    def is_eval(self) -> bool:
        return self in (TableKind.EVAL_SPARSE, TableKind.EVAL_DENSE)


class ShapeArchetype(str, Enum):
    """形状原型，前四种留给新类，后两种留给基础类"""

    SQUARE = "square"
    DISC = "disc"
    WIDE_RECTANGLE = "wide-rectangle"
    TALL_ELLIPSE = "tall-ellipse"
    TRIANGLE = "triangle"
    RING = "ring"


NOVEL_ARCHETYPES = frozenset(
    {ShapeArchetype.SQUARE, ShapeArchetype.DISC, ShapeArchetype.WIDE_RECTANGLE, ShapeArchetype.TALL_ELLIPSE}
)
BASE_ARCHETYPES = frozenset({ShapeArchetype.TRIANGLE, ShapeArchetype.RING})


@dataclass(frozen=True)
class CategoryProfile:
    """类别的外观模型：形状原型 + 基础色相"""

    category: CategoryId
    archetype: ShapeArchetype
    hue: float

    def __post_init__(self):
        allowed = NOVEL_ARCHETYPES if self.category.is_novel else BASE_ARCHETYPES
        if self.archetype not in allowed:
            raise ValueError(f"类别 {self.category.name} 的形状 {self.archetype.value} 与角色 {self.category.role.value} 不符")


class CategoryRegistry:
    """一次运行内的类别注册表"""

    def __init__(self, profiles: Iterable[CategoryProfile]):
        self._profiles: Dict[int, CategoryProfile] = {}
        for profile in profiles:
            if profile.category.id in self._profiles:
                raise ValueError(f"类别ID重复: {profile.category.id}")
            self._profiles[profile.category.id] = profile

    def __len__(self) -> int:
        return len(self._profiles)

    def profile(self, category: CategoryId) -> CategoryProfile:
        return self._profiles[category.id]

    def get(self, category_id: int) -> CategoryId:
        return self._profiles[category_id].category

    def by_name(self, name: str) -> CategoryId:
        for profile in self._profiles.values():
            if profile.category.name == name:
                return profile.category
        raise KeyError(f"未注册的类别: {name}")

    def novel(self) -> List[CategoryId]:
        return [p.category for p in self._sorted() if p.category.role == CategoryRole.NOVEL]

    def base(self) -> List[CategoryId]:
        return [p.category for p in self._sorted() if p.category.role == CategoryRole.BASE]

    def all(self) -> List[CategoryId]:
        return [p.category for p in self._sorted()]

    def _sorted(self) -> List[CategoryProfile]:
        return [self._profiles[k] for k in sorted(self._profiles)]


@dataclass(frozen=True)
class ObjectSpec:
    """单个物体实例"""

    category: CategoryId
    archetype: ShapeArchetype
    color: RGB
    color_seed: int
    scale: float
    rotation: float


@dataclass(frozen=True)
class PlacedObject:
    spec: ObjectSpec
    cx: float
    cy: float


@dataclass(frozen=True)
class SceneSpec:
    """场景描述；物体按放置顺序由后往前绘制"""

    kind: TableKind
    objects: Tuple[PlacedObject, ...]
    width: int
    height: int
    background: RGB
    seed: int
    noise_amplitude: int = 4

    def with_object(self, placed: PlacedObject) -> "SceneSpec":
        return replace(self, objects=self.objects + (placed,))

    def without_object(self, index: int) -> "SceneSpec":
        return replace(self, objects=self.objects[:index] + self.objects[index + 1:])

    def count(self, role: Optional[CategoryRole] = None) -> int:
        if role is None:
            return len(self.objects)
        return sum(1 for o in self.objects if o.spec.category.role == role)


@dataclass(frozen=True, eq=False)
class RenderedScene:
    """
    渲染结果

    ground_truth 对学习者隐藏，只供评估器和抓取模拟器使用；
    label_map 记录每个像素由哪个物体绘制（-1 为背景）。
    """

    spec: SceneSpec
    raster: np.ndarray
    ground_truth: Tuple[Annotation, ...]
    label_map: np.ndarray


@dataclass(frozen=True, eq=False)
class SupportView:
    """特写支持视图及其实际施加的抖动参数"""

    raster: np.ndarray
    view_index: int
    rotation: float
    scale: float


@dataclass(frozen=True)
class SceneConfig:
    """视觉域参数，全部可由配置覆盖"""

    train_size: int = 256
    dense_size: int = 384
    sparse_size: int = 256
    min_scale: float = 22.0
    max_scale: float = 40.0
    max_rotation: float = 0.35
    background: RGB = (150, 132, 112)
    noise_amplitude: int = 4
    hue_band: float = 0.04
    saturation_range: Tuple[float, float] = (0.55, 0.9)
    value_range: Tuple[float, float] = (0.78, 0.95)
    overlap_cap: float = 0.05
    clutter_cap: float = 0.4
    min_visible_fraction: float = 0.3
    max_attempts: int = 200
    max_dense_objects: int = 22
    sparse_count_range: Tuple[int, int] = (4, 7)
    dense_count_range: Tuple[int, int] = (14, 22)
    support_background: RGB = (212, 212, 212)
    support_scale: float = 56.0
    support_margin: int = 8
    view_rotation_step: float = 0.15
    view_rotation_floor: float = 0.08
    view_scale_jitter: float = 0.1
    views_per_grasp: int = 3

    def size_for(self, kind: TableKind) -> int:
        if kind == TableKind.EVAL_DENSE:
            return self.dense_size
        if kind == TableKind.EVAL_SPARSE:
            return self.sparse_size
        return self.train_size

    def cap_for(self, kind: TableKind) -> float:
        if kind in (TableKind.N_TABLE, TableKind.EVAL_DENSE):
            return self.clutter_cap
        return self.overlap_cap

    def zero_jitter(self) -> "SceneConfig":
        return replace(self, view_rotation_step=0.0, view_rotation_floor=0.0, view_scale_jitter=0.0)


DEFAULT_SCENE_CONFIG = SceneConfig()
