#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : dataset_io.py
@Time    : 2025/7/11 14:10
@Author  : zhouming
"""
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from jsonschema import Draft7Validator
from loguru import logger
from PIL import Image

from core.exceptions import SchemaError
from core.geometry import Annotation, BBox, CategoryId, CategoryRole
from models.scene_model import RenderedScene

ANNOTATION_SCHEMA_VERSION = 1


class AnnotationSource(str, Enum):
    GROUND_TRUTH = "ground-truth"
    ROBOT_ESTIMATE = "robot-estimate"
    PSEUDO = "pseudo"


ANNOTATION_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "image_id", "width", "height", "records"],
    "properties": {
        "schema_version": {"const": ANNOTATION_SCHEMA_VERSION},
        "image_id": {"type": "string", "minLength": 1},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["category_id", "category_name", "role", "box", "is_pseudo", "confidence", "source"],
                "properties": {
                    "category_id": {"type": "integer", "minimum": 0},
                    "category_name": {"type": "string"},
                    "role": {"enum": [r.value for r in CategoryRole]},
                    "box": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                    "is_pseudo": {"type": "boolean"},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "source": {"enum": [s.value for s in AnnotationSource]},
                },
            },
        },
    },
}

_VALIDATOR = Draft7Validator(ANNOTATION_SCHEMA)


@dataclass(frozen=True)
class AnnotationFile:
    """单张图像的标注文档"""

    image_id: str
    width: int
    height: int
    records: Tuple[Tuple[Annotation, AnnotationSource], ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": ANNOTATION_SCHEMA_VERSION,
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "records": [
                {
                    "category_id": ann.category.id,
                    "category_name": ann.category.name,
                    "role": ann.category.role.value,
                    "box": ann.box.to_list(),
                    "is_pseudo": ann.is_pseudo,
                    "confidence": ann.confidence,
                    "source": source.value,
                }
                for ann, source in self.records
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnnotationFile":
        validate_annotation_document(data)
        records = []
        for item in data["records"]:
            try:
                box = BBox.from_list(item["box"])
                category = CategoryId(item["category_id"], CategoryRole(item["role"]), item["category_name"])
                ann = Annotation(box, category, item["is_pseudo"], float(item["confidence"]))
            except ValueError as e:
                raise SchemaError(f"{data['image_id']}: 非法标注 {item}: {e}") from e
            records.append((ann, AnnotationSource(item["source"])))
        return cls(data["image_id"], data["width"], data["height"], tuple(records))


def validate_annotation_document(data: Dict[str, Any]) -> None:
    """
    校验标注文档

    Raises:
        SchemaError: 文档不符合 schema
    """
    errors = sorted(_VALIDATOR.iter_errors(data), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        raise SchemaError(f"标注文件不符合 schema: {'/'.join(str(p) for p in first.path)}: {first.message}")


def write_annotation_file(path: Union[str, Path], document: AnnotationFile) -> Path:
    path = Path(path)
    data = document.to_dict()
    validate_annotation_document(data)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_annotation_file(path: Union[str, Path]) -> AnnotationFile:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"标注文件不是合法 JSON: {path}: {e}") from e
    return AnnotationFile.from_dict(data)


def write_png(path: Union[str, Path], raster: np.ndarray) -> Path:
    """无损写入 RGB 图像"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8)).save(path, format="PNG")
    return path


def read_png(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"), dtype=np.uint8).copy()


def export_scenes(
    scenes: Sequence[RenderedScene], out_dir: Union[str, Path], prefix: str, manifest_extra: Dict[str, Any]
) -> Path:
    """
    导出评估场景：每张图像一个 PNG 和一个标注文件，外加一个清单

    Args:
        scenes: 渲染好的场景
        out_dir: 输出目录
        prefix: 图像ID前缀
        manifest_extra: 写入清单的附加字段（种子、类型、配置哈希等）

    Returns:
        Path: 清单路径
    """
    out_dir = Path(out_dir)
    entries: List[Dict[str, Any]] = []
    for index, scene in enumerate(scenes):
        image_id = f"{prefix}-{index:04d}"
        write_png(out_dir / "images" / f"{image_id}.png", scene.raster)
        document = AnnotationFile(
            image_id,
            int(scene.raster.shape[1]),
            int(scene.raster.shape[0]),
            tuple((ann, AnnotationSource.GROUND_TRUTH) for ann in scene.ground_truth),
        )
        write_annotation_file(out_dir / "annotations" / f"{image_id}.json", document)
        entries.append(
            {
                "image_id": image_id,
                "image": f"images/{image_id}.png",
                "annotations": f"annotations/{image_id}.json",
                "n_objects": len(scene.ground_truth),
            }
        )
    manifest = dict(manifest_extra, n_images=len(entries), images=entries)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info(f"已导出 {len(entries)} 张图像到 {out_dir}")
    return manifest_path
