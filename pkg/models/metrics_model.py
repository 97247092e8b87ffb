#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : metrics_model.py
@Time    : 2025/7/9 10:20
@Author  : zhouming
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class CategoryAP:
    category_id: int
    name: str
    ap: float
    ap50: float
    n_detections: int
    n_ground_truth: int


@dataclass(frozen=True)
class EvalResult:
    """
    评估结果

    per_category 只包含有真值的类别；overall 为这些类别的无加权均值，没有任何类别时为 None。
    """

    per_category: Dict[int, CategoryAP]
    overall_ap: Optional[float]
    overall_ap50: Optional[float]
    n_detections: int
    n_ground_truth: int
    absent: tuple = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "overall_ap": self.overall_ap,
            "overall_ap50": self.overall_ap50,
            "n_detections": self.n_detections,
            "n_ground_truth": self.n_ground_truth,
            "absent": list(self.absent),
            "per_category": {
                str(k): {
                    "name": v.name,
                    "ap": v.ap,
                    "ap50": v.ap50,
                    "n_detections": v.n_detections,
                    "n_ground_truth": v.n_ground_truth,
                }
                for k, v in sorted(self.per_category.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalResult":
        per_category = {
            int(k): CategoryAP(int(k), v["name"], v["ap"], v["ap50"], v["n_detections"], v["n_ground_truth"])
            for k, v in data["per_category"].items()
        }
        return cls(
            per_category,
            data["overall_ap"],
            data["overall_ap50"],
            data["n_detections"],
            data["n_ground_truth"],
            tuple(data.get("absent", ())),
        )


@dataclass(frozen=True)
class PseudoQuality:
    """伪标注质量：平均匹配 IoU、精确率（IoU≥0.5 的比例）、真值召回率"""

    mean_iou: float
    precision: Optional[float]
    recall: float
    n_pseudo: int
    n_ground_truth: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_iou": self.mean_iou,
            "precision": self.precision,
            "recall": self.recall,
            "n_pseudo": self.n_pseudo,
            "n_ground_truth": self.n_ground_truth,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PseudoQuality":
        return cls(data["mean_iou"], data["precision"], data["recall"], data["n_pseudo"], data["n_ground_truth"])


@dataclass
class MetricsReport:
    """单个阶段的评估报告；wall_clock 单独写入 timing.json"""

    stage: int
    mode: str
    sparse: EvalResult
    dense: EvalResult
    pseudo_quality: Optional[PseudoQuality]
    database_sizes: Dict[str, int]
    categories: tuple
    config_hash: str
    wall_clock: float = field(default=0.0, compare=False)

    @property
    def images_collected(self) -> int:
        return self.database_sizes.get("udo", 0) + self.database_sizes.get("moa", 0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "mode": self.mode,
            "config_hash": self.config_hash,
            "categories": list(self.categories),
            "images_collected": self.images_collected,
            "database_sizes": dict(sorted(self.database_sizes.items())),
            "sparse": self.sparse.to_dict(),
            "dense": self.dense.to_dict(),
            "pseudo_quality": self.pseudo_quality.to_dict() if self.pseudo_quality else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], wall_clock: float = 0.0) -> "MetricsReport":
        pseudo = data.get("pseudo_quality")
        return cls(
            stage=int(data["stage"]),
            mode=data["mode"],
            sparse=EvalResult.from_dict(data["sparse"]),
            dense=EvalResult.from_dict(data["dense"]),
            pseudo_quality=PseudoQuality.from_dict(pseudo) if pseudo else None,
            database_sizes=dict(data["database_sizes"]),
            categories=tuple(data["categories"]),
            config_hash=data["config_hash"],
            wall_clock=wall_clock,
        )
