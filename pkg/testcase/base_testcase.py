#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : base_testcase.py
@Time    : 2025/6/10 13:45
@Author  : zhouming
"""
from typing import Optional, Sequence

import numpy as np
import pytest
from loguru import logger

from core.detector import FewShotDetector
from core.geometry import Annotation, BBox, CategoryId, CategoryRole, Detection
from core.grasp_simulator import GraspSimulator
from core.scene_generator import SceneGenerator
from models.database_model import ImageRecord, ImageRole
from models.detector_model import DetectorConfig
from models.scene_model import CategoryProfile, CategoryRegistry, SceneConfig, ShapeArchetype

CUBE = CategoryId(0, CategoryRole.NOVEL, "cube")
CAN = CategoryId(1, CategoryRole.NOVEL, "can")
WEDGE = CategoryId(10, CategoryRole.BASE, "wedge")
TAPE = CategoryId(11, CategoryRole.BASE, "tape")


def make_registry() -> CategoryRegistry:
    """两个新类 + 两个基础类的小注册表"""
    return CategoryRegistry(
        [
            CategoryProfile(CUBE, ShapeArchetype.SQUARE, 0.0),
            CategoryProfile(CAN, ShapeArchetype.DISC, 0.33),
            CategoryProfile(WEDGE, ShapeArchetype.TRIANGLE, 0.05),
            CategoryProfile(TAPE, ShapeArchetype.RING, 0.58),
        ]
    )


def make_record(
    image_id: str,
    raster: Optional[np.ndarray] = None,
    category: CategoryId = CUBE,
    role: ImageRole = ImageRole.UDO,
    size: int = 32,
) -> ImageRecord:
    if raster is None:
        raster = np.zeros((size, size, 3), dtype=np.uint8)
    return ImageRecord(image_id, raster, role, category)


def blank_image(size: int = 96, color: Sequence[int] = (150, 132, 112)) -> np.ndarray:
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:] = color
    return image


def box(x_min: float, y_min: float, x_max: float, y_max: float) -> BBox:
    return BBox(float(x_min), float(y_min), float(x_max), float(y_max))


def gt(b: BBox, category: CategoryId = CUBE) -> Annotation:
    return Annotation(b, category)


def det(b: BBox, score: float, category: CategoryId = CUBE) -> Detection:
    return Detection(b, score, category)


class BaseTestCase:
    """测试用例基类"""

    @pytest.fixture(scope="class")
    def registry(self) -> CategoryRegistry:
        """类别注册表fixture"""
        return make_registry()

    @pytest.fixture(scope="class")
    def generator(self, registry) -> SceneGenerator:
        """场景生成器fixture，使用默认视觉域参数"""
        return SceneGenerator(registry, SceneConfig())

    @pytest.fixture(scope="class")
    def simulator(self, generator) -> GraspSimulator:
        return GraspSimulator(generator)

    @pytest.fixture(scope="class")
    def detector(self) -> FewShotDetector:
        """检测器fixture，候选框缓存在类内共享"""
        return FewShotDetector(DetectorConfig())

    @staticmethod
    def setup_method(method):
        """测试方法执行前的设置"""
        logger.info(f"开始执行测试方法: {method.__name__}")

    @staticmethod
    def teardown_method(method):
        """测试方法执行后的清理"""
        logger.info(f"测试方法执行完成: {method.__name__}")
