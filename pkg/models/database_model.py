#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : database_model.py
@Time    : 2025/7/4 10:05
@Author  : zhouming
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from core.geometry import Annotation, CategoryId


class ImageRole(str, Enum):
    """图像角色"""

    UDO = "udo"
    MOA = "moa"
    SUPPORT = "support"
    EVAL = "eval"
    BOOTSTRAP = "bootstrap"


class EntrySource(str, Enum):
    """联合训练集条目的来源标签"""

    PSEUDO = "pseudo"
    MOA = "moa"
    GROUND_TRUTH = "ground-truth"


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """采集到的一张图像及其阶段元数据"""

    image_id: str
    raster: np.ndarray
    role: ImageRole
    category: CategoryId
    stage: int = 0
    round_index: int = 0
    view_index: Optional[int] = None

    @property
    def width(self) -> int:
        return int(self.raster.shape[1])

    @property
    def height(self) -> int:
        return int(self.raster.shape[0])


@dataclass(frozen=True, eq=False)
class JointEntry:
    """D_All 中的一条记录：查询图像、标注和来源"""

    record: ImageRecord
    annotations: Tuple[Annotation, ...]
    source: EntrySource


@dataclass
class DatabaseBundle:
    """
    ODIP 数据库

    D_UDO/D_MOA/D_Support 只追加不删除；D_Pseudo 每个阶段重建。
    hidden_truth 只供评估使用，学习流程不得读取。
    """

    udo: List[ImageRecord] = field(default_factory=list)
    moa: List[Tuple[ImageRecord, Annotation]] = field(default_factory=list)
    support: Dict[int, List[ImageRecord]] = field(default_factory=dict)
    pseudo: List[Tuple[ImageRecord, Tuple[Annotation, ...]]] = field(default_factory=list)
    hidden_truth: Dict[str, Tuple[Annotation, ...]] = field(default_factory=dict)

    def add_udo(self, record: ImageRecord, truth: Iterable[Annotation]) -> None:
        self.udo.append(record)
        self.hidden_truth[record.image_id] = tuple(truth)

    def add_moa(self, record: ImageRecord, label: Annotation, truth: Iterable[Annotation]) -> None:
        if label.is_pseudo:
            raise ValueError("D_MOA 只接受机器人估计的一次性标注")
        self.moa.append((record, label))
        self.hidden_truth[record.image_id] = tuple(truth)

    def add_support(self, record: ImageRecord) -> None:
        self.support.setdefault(record.category.id, []).append(record)

    def replace_pseudo(self, pseudo: List[Tuple[ImageRecord, Tuple[Annotation, ...]]]) -> None:
        if any(not a.is_pseudo for _, annotations in pseudo for a in annotations):
            raise ValueError("D_Pseudo 中的标注必须全部为伪标注")
        self.pseudo = list(pseudo)

    def supports_of(self, category: CategoryId) -> List[ImageRecord]:
        return self.support.get(category.id, [])

    def truth_of(self, image_id: str) -> Tuple[Annotation, ...]:
        return self.hidden_truth[image_id]

    def sizes(self) -> Dict[str, int]:
        return {
            "udo": len(self.udo),
            "moa": len(self.moa),
            "support": sum(len(v) for v in self.support.values()),
            "pseudo": len(self.pseudo),
            "pseudo_boxes": sum(len(a) for _, a in self.pseudo),
        }
