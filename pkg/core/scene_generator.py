#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : scene_generator.py
@Time    : 2025/7/3 09:40
@Author  : zhouming
"""
import colorsys
import math
from typing import Collection, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from core.exceptions import PlacementInfeasible
from core.geometry import Annotation, BBox, CategoryId, CategoryRole, iou
from models.scene_model import (
    DEFAULT_SCENE_CONFIG,
    CategoryRegistry,
    ObjectSpec,
    PlacedObject,
    RenderedScene,
    SceneConfig,
    SceneSpec,
    ShapeArchetype,
    SupportView,
    TableKind,
)
from utility.seed_utils.seeding import EVAL_NAMESPACE, derive_seed

# 物体绘制窗口半径 = scale * 该系数，覆盖所有形状旋转后的外接范围
_WINDOW_FACTOR = 0.75
B_TABLE_MAX_BASE = 5


def _inside(archetype: ShapeArchetype, lx: np.ndarray, ly: np.ndarray, scale: float) -> np.ndarray:
    """局部坐标系下的形状判定"""
    half = scale / 2.0
    if archetype == ShapeArchetype.SQUARE:
        return (np.abs(lx) <= half) & (np.abs(ly) <= half)
    if archetype == ShapeArchetype.DISC:
        return lx ** 2 + ly ** 2 <= half ** 2
    if archetype == ShapeArchetype.WIDE_RECTANGLE:
        return (np.abs(lx) <= half) & (np.abs(ly) <= 0.275 * scale)
    if archetype == ShapeArchetype.TALL_ELLIPSE:
        return (lx / (0.25 * scale)) ** 2 + (ly / half) ** 2 <= 1.0
    if archetype == ShapeArchetype.TRIANGLE:
        root3 = math.sqrt(3.0)
        return (ly <= half / 2.0) & (root3 * lx - ly <= half) & (-root3 * lx - ly <= half)
    if archetype == ShapeArchetype.RING:
        r2 = lx ** 2 + ly ** 2
        return (r2 <= half ** 2) & (r2 >= (0.22 * scale) ** 2)
    raise ValueError(f"未知形状: {archetype}")


def object_window(
    obj: ObjectSpec, cx: float, cy: float, width: int, height: int
) -> Tuple[int, int, np.ndarray]:
    """
    在图像范围内栅格化单个物体

    Returns:
        Tuple[int, int, np.ndarray]: 窗口左上角 (y0, x0) 与窗口内的布尔掩码
    """
    half = int(math.ceil(obj.scale * _WINDOW_FACTOR)) + 1
    icx, icy = int(math.floor(cx)), int(math.floor(cy))
    x0, x1 = max(0, icx - half), min(width, icx + half + 1)
    y0, y1 = max(0, icy - half), min(height, icy + half + 1)
    if x0 >= x1 or y0 >= y1:
        return max(y0, 0), max(x0, 0), np.zeros((0, 0), dtype=bool)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    cos_r, sin_r = math.cos(obj.rotation), math.sin(obj.rotation)
    lx = cos_r * dx + sin_r * dy
    ly = -sin_r * dx + cos_r * dy
    return y0, x0, _inside(obj.archetype, lx, ly, obj.scale)


def _window_box(y0: int, x0: int, mask: np.ndarray) -> Optional[BBox]:
    box = BBox.from_mask(mask)
    if box is None:
        return None
    return BBox(box.x_min + x0, box.y_min + y0, box.x_max + x0, box.y_max + y0)


def _background(shape: Tuple[int, int], color: Sequence[int], amplitude: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = np.broadcast_to(np.asarray(color, dtype=np.int16), (*shape, 3))
    if amplitude > 0:
        base = base + rng.integers(-amplitude, amplitude + 1, size=(*shape, 3), dtype=np.int16)
    return np.clip(base, 0, 255).astype(np.uint8)


def generate_scene(spec: SceneSpec) -> RenderedScene:
    """
    渲染场景，按放置顺序由后往前绘制

    真值框是每个物体最终可见像素的紧致外接框。

    Args:
        spec: 场景描述

    Returns:
        RenderedScene: 栅格图像、隐藏真值及像素归属图

    Raises:
        PlacementInfeasible: 某个物体被完全遮挡或完全位于图像外
    """
    raster = _background((spec.height, spec.width), spec.background, spec.noise_amplitude, spec.seed)
    label_map = np.full((spec.height, spec.width), -1, dtype=np.int16)
    windows = []
    for index, placed in enumerate(spec.objects):
        y0, x0, mask = object_window(placed.spec, placed.cx, placed.cy, spec.width, spec.height)
        h, w = mask.shape
        raster[y0:y0 + h, x0:x0 + w][mask] = placed.spec.color
        label_map[y0:y0 + h, x0:x0 + w][mask] = index
        windows.append((y0, x0, h, w))

    ground_truth = []
    for index, (placed, (y0, x0, h, w)) in enumerate(zip(spec.objects, windows)):
        box = _window_box(y0, x0, label_map[y0:y0 + h, x0:x0 + w] == index)
        if box is None:
            raise PlacementInfeasible(f"物体 {index} ({placed.spec.category.name}) 没有可见像素")
        ground_truth.append(Annotation(box, placed.spec.category))
    return RenderedScene(spec, raster, tuple(ground_truth), label_map)


class _Occupancy:
    """放置采样期间维护的像素归属和可见像素统计"""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.label_map = np.full((height, width), -1, dtype=np.int16)
        self.boxes: List[BBox] = []
        self.full_counts: List[int] = []
        self.visible_counts: List[int] = []

    @classmethod
    def from_spec(cls, spec: SceneSpec) -> "_Occupancy":
        occupancy = cls(spec.width, spec.height)
        for placed in spec.objects:
            occupancy.add(placed.spec, placed.cx, placed.cy)
        return occupancy

    def add(self, obj: ObjectSpec, cx: float, cy: float, cap: float = 1.0, min_visible: float = 0.0) -> bool:
        """尝试加入物体；违反重叠或可见性约束时不修改状态并返回 False"""
        y0, x0, mask = object_window(obj, cx, cy, self.width, self.height)
        box = _window_box(y0, x0, mask)
        if box is None:
            return False
        if any(iou(box, other) > cap for other in self.boxes):
            return False
        h, w = mask.shape
        window = self.label_map[y0:y0 + h, x0:x0 + w]
        covered = window[mask]
        lost = np.bincount(covered[covered >= 0], minlength=len(self.boxes))
        for j, lost_j in enumerate(lost[:len(self.boxes)]):
            if self.visible_counts[j] - lost_j < min_visible * self.full_counts[j]:
                return False
        window[mask] = len(self.boxes)
        for j, lost_j in enumerate(lost[:len(self.boxes)]):
            self.visible_counts[j] -= int(lost_j)
        pixels = int(mask.sum())
        self.boxes.append(box)
        self.full_counts.append(pixels)
        self.visible_counts.append(pixels)
        return True


class SceneGenerator:
    """合成二维桌面世界：物体外观、场景组合、栅格化和支持视图"""

    def __init__(self, registry: CategoryRegistry, config: SceneConfig = DEFAULT_SCENE_CONFIG):
        """
        初始化场景生成器

        Args:
            registry: 类别注册表
            config: 视觉域参数
        """
        self.registry = registry
        self.config = config

    def sample_object(self, category: CategoryId, rng: np.random.Generator) -> ObjectSpec:
        """按类别外观模型采样一个物体实例，颜色在色相带内抖动"""
        profile = self.registry.profile(category)
        color_seed = int(rng.integers(0, 2 ** 31 - 1))
        color_rng = np.random.default_rng(color_seed)
        hue = (profile.hue + color_rng.uniform(-self.config.hue_band, self.config.hue_band)) % 1.0
        saturation = color_rng.uniform(*self.config.saturation_range)
        value = color_rng.uniform(*self.config.value_range)
        color = tuple(int(round(c * 255)) for c in colorsys.hsv_to_rgb(hue, saturation, value))
        return ObjectSpec(
            category=category,
            archetype=profile.archetype,
            color=color,
            color_seed=color_seed,
            scale=float(rng.uniform(self.config.min_scale, self.config.max_scale)),
            rotation=float(rng.uniform(-self.config.max_rotation, self.config.max_rotation)),
        )

    def empty_spec(self, kind: TableKind, seed: int) -> SceneSpec:
        size = self.config.size_for(kind)
        return SceneSpec(kind, (), size, size, tuple(self.config.background), seed, self.config.noise_amplitude)

    def _check_pool(self, kind: TableKind, pool: Collection[CategoryId], count_range: Tuple[int, int]) -> None:
        if not pool:
            raise ValueError("类别池不能为空")
        lo, hi = count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"物体数量范围非法: {count_range}")
        if kind == TableKind.N_TABLE:
            if len(pool) != 1 or not next(iter(pool)).is_novel:
                raise ValueError("N-table 只能放置同一新类的物体")
        elif kind == TableKind.B_TABLE:
            if any(c.is_novel for c in pool):
                raise ValueError("B-table 采样池只能包含基础类")
            if hi > B_TABLE_MAX_BASE:
                raise ValueError(f"B-table 基础物体数必须少于6，实际上限 {hi}")
        elif kind == TableKind.EVAL_DENSE and hi > self.config.max_dense_objects:
            raise ValueError(f"密集评估场景最多 {self.config.max_dense_objects} 个物体")

    def sample_scene_spec(
        self,
        kind: TableKind,
        category_pool: Collection[CategoryId],
        count_range: Tuple[int, int],
        seed: int,
    ) -> SceneSpec:
        """
        拒绝采样生成满足重叠约束的场景描述

        Args:
            kind: 场景类型
            category_pool: 类别池
            count_range: 物体数量范围 (min, max)，闭区间均匀采样
            seed: 随机种子

        Returns:
            SceneSpec: 场景描述

        Raises:
            PlacementInfeasible: 某个物体在 max_attempts 次尝试后仍无法放置
        """
        self._check_pool(kind, category_pool, count_range)
        rng = np.random.default_rng(seed)
        pool = sorted(category_pool, key=lambda c: c.id)
        count = int(rng.integers(count_range[0], count_range[1] + 1))
        spec = self.empty_spec(kind, seed)
        occupancy = _Occupancy(spec.width, spec.height)
        for _ in range(count):
            category = pool[int(rng.integers(len(pool)))]
            obj = self.sample_object(category, rng)
            spec = self._place(spec, obj, rng, occupancy)
        return spec

    def place_object(self, spec: SceneSpec, obj: ObjectSpec, rng: np.random.Generator) -> SceneSpec:
        """在已有场景中为物体找一个满足约束的位置（用于释放到 B-table）"""
        return self._place(spec, obj, rng, _Occupancy.from_spec(spec))

    def _place(self, spec: SceneSpec, obj: ObjectSpec, rng: np.random.Generator, occupancy: _Occupancy) -> SceneSpec:
        cap = self.config.cap_for(spec.kind)
        margin = obj.scale * _WINDOW_FACTOR
        if 2 * margin >= min(spec.width, spec.height):
            raise PlacementInfeasible(f"物体尺度 {obj.scale:.1f} 超出 {spec.width}x{spec.height} 图像")
        for _ in range(self.config.max_attempts):
            cx = float(rng.uniform(margin, spec.width - margin))
            cy = float(rng.uniform(margin, spec.height - margin))
            if occupancy.add(obj, cx, cy, cap, self.config.min_visible_fraction):
                return spec.with_object(PlacedObject(obj, cx, cy))
        raise PlacementInfeasible(
            f"{spec.kind.value} 场景在 {self.config.max_attempts} 次尝试后无法放置第 {len(spec.objects) + 1} 个物体"
        )

    def validate_scene_spec(self, spec: SceneSpec) -> None:
        """
        检查场景描述是否满足类型约束

        Raises:
            ValueError: 违反任一约束
        """
        novel = [o.spec.category for o in spec.objects if o.spec.category.is_novel]
        n_base = spec.count(CategoryRole.BASE)
        if spec.kind == TableKind.B_TABLE and (n_base > B_TABLE_MAX_BASE or len(novel) > 1):
            raise ValueError(f"B-table 含 {n_base} 个基础物体和 {len(novel)} 个新类物体")
        if spec.kind == TableKind.N_TABLE and (n_base > 0 or len(set(novel)) > 1):
            raise ValueError("N-table 只能包含同一新类的物体")
        if spec.kind == TableKind.EVAL_DENSE and len(spec.objects) > self.config.max_dense_objects:
            raise ValueError(f"密集场景含 {len(spec.objects)} 个物体")
        for placed in spec.objects:
            if not self.config.min_scale <= placed.spec.scale <= self.config.max_scale:
                raise ValueError(f"物体尺度 {placed.spec.scale} 超出配置范围")
        cap = self.config.cap_for(spec.kind)
        boxes = [
            _window_box(*object_window(o.spec, o.cx, o.cy, spec.width, spec.height)) for o in spec.objects
        ]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if iou(boxes[i], boxes[j]) > cap + 1e-12:
                    raise ValueError(f"物体 {i} 与 {j} 的重叠超过 {cap}")

    def render_support_view(self, obj: ObjectSpec, view_index: int, seed: int) -> SupportView:
        """
        渲染被抓取物体的特写视图

        每个视角的旋转偏移为 view_index*step + U(0, step-floor)，
        因此任意两个不同视角的旋转差不小于 floor。

        Args:
            obj: 被抓取物体
            view_index: 视角编号，取值 [0, views_per_grasp)
            seed: 随机种子

        Returns:
            SupportView: 紧致裁剪加固定边距的特写图像和抖动参数
        """
        cfg = self.config
        if not 0 <= view_index < cfg.views_per_grasp:
            raise ValueError(f"视角编号越界: {view_index}")
        rng = np.random.default_rng([seed, view_index])
        slack = max(cfg.view_rotation_step - cfg.view_rotation_floor, 0.0)
        rotation = obj.rotation + view_index * cfg.view_rotation_step + (rng.uniform(0.0, slack) if slack > 0 else 0.0)
        scale = cfg.support_scale
        if cfg.view_scale_jitter > 0:
            scale *= 1.0 + rng.uniform(-cfg.view_scale_jitter, cfg.view_scale_jitter)

        view_obj = ObjectSpec(obj.category, obj.archetype, obj.color, obj.color_seed, scale, rotation)
        size = int(math.ceil(2 * scale * _WINDOW_FACTOR)) + 2 * cfg.support_margin + 2
        canvas = _background((size, size), cfg.support_background, cfg.noise_amplitude, int(rng.integers(0, 2 ** 31 - 1)))
        y0, x0, mask = object_window(view_obj, size / 2.0, size / 2.0, size, size)
        h, w = mask.shape
        canvas[y0:y0 + h, x0:x0 + w][mask] = obj.color
        tight = _window_box(y0, x0, mask)
        m = cfg.support_margin
        crop = canvas[
            max(0, int(tight.y_min) - m):min(size, int(tight.y_max) + m),
            max(0, int(tight.x_min) - m):min(size, int(tight.x_max) + m),
        ]
        return SupportView(np.ascontiguousarray(crop), view_index, rotation, scale)

    def make_eval_dataset(
        self,
        kind: TableKind,
        n_images: int,
        novel_categories: Iterable[CategoryId],
        base_categories: Iterable[CategoryId],
        seed: int,
        show_progress: bool = False,
    ) -> List[RenderedScene]:
        """
        生成留出评估集，种子取自与训练采集不相交的命名空间

        Args:
            kind: eval-sparse 或 eval-dense
            n_images: 图像数量，至少为 1
            novel_categories: 新类集合
            base_categories: 基础类集合
            seed: 数据集种子

        Returns:
            List[RenderedScene]: 评估场景
        """
        if not kind.is_eval:
            raise ValueError(f"评估集类型必须为 eval-sparse/eval-dense: {kind.value}")
        if n_images < 1:
            raise ValueError(f"评估集图像数量至少为1: {n_images}")
        pool = set(novel_categories) | set(base_categories)
        count_range = self.config.dense_count_range if kind == TableKind.EVAL_DENSE else self.config.sparse_count_range
        scenes = []
        for index in tqdm(range(n_images), desc=f"生成{kind.value}", disable=not show_progress):
            scene_seed = derive_seed(seed, EVAL_NAMESPACE, kind.value, index)
            scenes.append(generate_scene(self.sample_scene_spec(kind, pool, count_range, scene_seed)))
        logger.debug(f"已生成 {kind.value} 评估集: {n_images} 张图像")
        return scenes
