#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : config_loader.py
@Time    : 2025/7/11 09:30
@Author  : zhouming
"""
import copy
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv
from jsonschema import Draft7Validator, validators
from loguru import logger

from apis.loop.bootstrap import BootstrapConfig
from apis.loop.loop_runner import AblationMode, RunConfig
from core.exceptions import ConfigError
from core.geometry import CategoryId, CategoryRole
from models.detector_model import DetectorConfig
from models.grasp_model import GraspModel, PlacementNoise
from models.scene_model import CategoryProfile, CategoryRegistry, SceneConfig, ShapeArchetype

_RANGE = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}
_RGB = {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 255}, "minItems": 3, "maxItems": 3}
_UNIT_RANGE = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 2, "maxItems": 2}

_CATEGORY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "name", "archetype", "hue"],
    "properties": {
        "id": {"type": "integer", "minimum": 0},
        "name": {"type": "string", "minLength": 1},
        "archetype": {"enum": [a.value for a in ShapeArchetype]},
        "hue": {"type": "number", "minimum": 0, "maximum": 1},
    },
}


def _section(properties: Dict[str, Any], required=()) -> Dict[str, Any]:
    return {
        "type": "object",
        "additionalProperties": False,
        "required": list(required),
        "properties": properties,
        "default": {},
    }


EXPERIMENT_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["run", "categories"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "default": 2024},
        "run": _section(
            {
                # 以下五项必须显式给出，没有默认值
                "T": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
                "L": {"type": "integer", "minimum": 0},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "k": {"type": "integer", "minimum": 1},
                "tau_pseudo": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.6},
                "mode": {"enum": [m.value for m in AblationMode], "default": "joint"},
                "schedule": {
                    "type": "array",
                    "default": [],
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["stage", "categories"],
                        "properties": {
                            "stage": {"type": "integer", "minimum": 1},
                            "categories": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        },
                    },
                },
                "warm_start": {"type": "boolean", "default": False},
                "pseudo_cross_category": {"type": "boolean", "default": False},
                "support_sampling": {"enum": ["recent", "random"], "default": "recent"},
                "task_support_sampling": {"enum": ["recent", "random", "round"], "default": "round"},
                "skip_unlabeled_pseudo": {"type": "boolean", "default": True},
                "pseudo_mix_weight": {"type": "number", "minimum": 0, "default": 1.0},
                "finetune_lr": {"type": "number", "exclusiveMinimum": 0, "default": 0.2},
                "n_novel": dict(_RANGE, default=[6, 10]),
                "n_base": dict(_RANGE, default=[2, 5]),
                "max_tasks": {"type": "integer", "minimum": 1, "default": 256},
                "contrast_tasks": {"type": "boolean", "default": True},
                "max_round_restarts": {"type": "integer", "minimum": 0, "default": 5},
            },
            required=("T", "N", "L", "eta", "k"),
        ),
        "categories": {
            "type": "object",
            "additionalProperties": False,
            "required": ["novel", "base"],
            "properties": {
                "novel": {"type": "array", "items": _CATEGORY, "minItems": 1},
                "base": {"type": "array", "items": _CATEGORY, "minItems": 1},
            },
        },
        "scene": _section(
            {
                "train_size": {"type": "integer", "minimum": 64},
                "dense_size": {"type": "integer", "minimum": 64},
                "sparse_size": {"type": "integer", "minimum": 64},
                "min_scale": {"type": "number", "exclusiveMinimum": 0},
                "max_scale": {"type": "number", "exclusiveMinimum": 0},
                "max_rotation": {"type": "number", "minimum": 0},
                "background": _RGB,
                "noise_amplitude": {"type": "integer", "minimum": 0},
                "hue_band": {"type": "number", "minimum": 0, "maximum": 0.5},
                "saturation_range": _UNIT_RANGE,
                "value_range": _UNIT_RANGE,
                "overlap_cap": {"type": "number", "minimum": 0, "maximum": 1},
                "clutter_cap": {"type": "number", "minimum": 0, "maximum": 1},
                "min_visible_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "max_attempts": {"type": "integer", "minimum": 1},
                "max_dense_objects": {"type": "integer", "minimum": 1},
                "sparse_count_range": _RANGE,
                "dense_count_range": _RANGE,
                "support_background": _RGB,
                "support_scale": {"type": "number", "exclusiveMinimum": 0},
                "support_margin": {"type": "integer", "minimum": 0},
                "view_rotation_step": {"type": "number", "minimum": 0},
                "view_rotation_floor": {"type": "number", "minimum": 0},
                "view_scale_jitter": {"type": "number", "minimum": 0, "maximum": 0.5},
                "views_per_grasp": {"type": "integer", "minimum": 1},
            }
        ),
        "grasp": _section(
            {
                "success_probability": {"type": "number", "minimum": 0, "maximum": 1},
                "max_retries": {"type": "integer", "minimum": 0},
                "center_sigma": {"type": "number", "minimum": 0},
                "scale_sigma": {"type": "number", "minimum": 0},
            }
        ),
        "detector": _section(
            {
                "background_band": {"type": "integer", "minimum": 1},
                "background_threshold": {"type": "number", "minimum": 0},
                "min_component_area": {"type": "integer", "minimum": 1},
                "max_single_object_area": {"type": "integer", "minimum": 1},
                "window_scales": {"type": "array", "items": {"type": "integer", "minimum": 4}, "minItems": 1},
                "window_aspects": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "min_window_fill": {"type": "number", "minimum": 0, "maximum": 1},
                "proposal_nms_iou": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_proposals": {"type": "integer", "minimum": 1},
                "detect_nms_iou": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_detections": {"type": "integer", "minimum": 1},
                "positive_iou": {"type": "number", "minimum": 0, "maximum": 1},
                "negative_iou": {"type": "number", "minimum": 0, "maximum": 1},
                "margin": {"type": "number", "minimum": 0},
                "negative_weight": {"type": "number", "minimum": 0},
                "shot_reduce": {"enum": ["max", "mean"]},
                "init_tau": {"type": "number", "minimum": 0, "maximum": 1},
                "init_weights": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 4, "maxItems": 4},
                "convergence_tol": {"type": "number", "minimum": 0},
                "convergence_patience": {"type": "integer", "minimum": 1},
                "max_epochs": {"type": "integer", "minimum": 1},
                "anchor_weight": {"type": "number", "minimum": 0},
                "prototype_scoring": {"type": "boolean"},
                "max_prototypes": {"type": "integer", "minimum": 1},
            }
        ),
        "bootstrap": _section(
            {
                "n_scenes": {"type": "integer", "minimum": 1, "default": 48},
                "count_range": dict(_RANGE, default=[2, 5]),
                "k": {"type": "integer", "minimum": 1, "default": 3},
            }
        ),
        "eval": _section(
            {
                "sparse_images": {"type": "integer", "minimum": 1, "default": 100},
                "dense_images": {"type": "integer", "minimum": 1, "default": 100},
            }
        ),
        "output": _section(
            {
                "dir": {"type": "string", "minLength": 1, "default": "runs/odip"},
                "xlsx": {"type": "boolean", "default": True},
                "log_level": {"enum": ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR"], "default": "INFO"},
            }
        ),
    },
}


def _extend_with_default(validator_class):
    """校验时顺带填充 schema 中声明的默认值"""
    validate_properties = validator_class.VALIDATORS["properties"]

    def set_defaults(validator, properties, instance, schema):
        if isinstance(instance, dict):
            for name, subschema in properties.items():
                if "default" in subschema:
                    instance.setdefault(name, copy.deepcopy(subschema["default"]))
        yield from validate_properties(validator, properties, instance, schema)

    return validators.extend(validator_class, {"properties": set_defaults})


DefaultFillingValidator = _extend_with_default(Draft7Validator)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """校验后的完整实验配置"""

    raw: Dict[str, Any]
    run: RunConfig
    scene: SceneConfig
    detector: DetectorConfig
    grasp: GraspModel
    bootstrap: BootstrapConfig
    registry: CategoryRegistry
    sparse_images: int
    dense_images: int
    seed: int
    output_dir: Path
    write_xlsx: bool
    log_level: str
    config_hash: str
    path: Optional[Path] = None


def config_hash(data: Dict[str, Any]) -> str:
    """规范化（键排序）JSON 的 sha256"""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _coerce(cls, section: Dict[str, Any]):
    """把 YAML 列表转换成数据类中对应的元组字段"""
    defaults = cls()
    values = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        value = section[f.name]
        if isinstance(getattr(defaults, f.name), tuple):
            value = tuple(value)
        values[f.name] = value
    return cls(**values)


def validate_config(data: Dict[str, Any]) -> Dict[str, Any]:
    """
    按 schema 校验配置并填充默认值

    Raises:
        ConfigError: 未知键、缺少必填项或取值越界
    """
    filled = copy.deepcopy(data)
    errors = sorted(DefaultFillingValidator(EXPERIMENT_SCHEMA).iter_errors(filled), key=lambda e: list(e.path))
    if errors:
        details = "; ".join(f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(f"配置校验失败: {details}")
    return filled


def _registry(section: Dict[str, Any]) -> CategoryRegistry:
    profiles = []
    for role, key in ((CategoryRole.NOVEL, "novel"), (CategoryRole.BASE, "base")):
        for item in section[key]:
            category = CategoryId(item["id"], role, item["name"])
            profiles.append(CategoryProfile(category, ShapeArchetype(item["archetype"]), float(item["hue"])))
    names = [p.category.name for p in profiles]
    if len(set(names)) != len(names):
        raise ConfigError(f"类别名称重复: {names}")
    return CategoryRegistry(profiles)


def build_config(data: Dict[str, Any], path: Optional[Path] = None) -> ExperimentConfig:
    """
    由配置字典构造 ExperimentConfig

    Raises:
        ConfigError: 校验失败或参数之间互相矛盾
    """
    raw = validate_config(data)
    try:
        registry = _registry(raw["categories"])
        run = dict(raw["run"])
        schedule = tuple(
            (item["stage"], tuple(registry.by_name(name).id for name in item["categories"]))
            for item in run.pop("schedule")
        )
        for name, item in zip(("n_novel", "n_base"), (run["n_novel"], run["n_base"])):
            run[name] = tuple(item)
        run_config = RunConfig(schedule=schedule, **run)
        grasp = raw["grasp"]
        grasp_model = GraspModel(
            success_probability=grasp.get("success_probability", 0.85),
            max_retries=grasp.get("max_retries", 3),
            noise=PlacementNoise(grasp.get("center_sigma", 2.0), grasp.get("scale_sigma", 0.05)),
        )
        detector = _coerce(DetectorConfig, dict(raw["detector"], finetune_lr=run_config.finetune_lr))
        scene = _coerce(SceneConfig, raw["scene"])
        boot = raw["bootstrap"]
        bootstrap = BootstrapConfig(boot["n_scenes"], tuple(boot["count_range"]), boot["k"])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"配置参数不一致: {e}") from e
    if scene.min_scale > scene.max_scale:
        raise ConfigError(f"min_scale 大于 max_scale: {scene.min_scale} > {scene.max_scale}")

    return ExperimentConfig(
        raw=raw,
        run=run_config,
        scene=scene,
        detector=detector,
        grasp=grasp_model,
        bootstrap=bootstrap,
        registry=registry,
        sparse_images=raw["eval"]["sparse_images"],
        dense_images=raw["eval"]["dense_images"],
        seed=raw["seed"],
        output_dir=Path(raw["output"]["dir"]),
        write_xlsx=raw["output"]["xlsx"],
        log_level=raw["output"]["log_level"],
        config_hash=config_hash(raw),
        path=path,
    )


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> ExperimentConfig:
    """
    读取 YAML 配置文件

    Args:
        path: 配置文件路径
        overrides: 按节覆盖的键值，例如 {"run": {"mode": "moa-only"}}

    Returns:
        ExperimentConfig: 校验后的配置

    Raises:
        ConfigError: 文件不存在、YAML 解析失败或校验失败
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError as e:
        raise ConfigError(f"配置文件不存在: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML 解析失败: {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}")
    for section, values in (overrides or {}).items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values
    config = build_config(data, path)
    logger.debug(f"已加载配置 {path}，哈希 {config.config_hash[:12]}")
    return config


def with_overrides(config: ExperimentConfig, **sections: Dict[str, Any]) -> ExperimentConfig:
    """基于已校验的配置覆盖部分键并重新计算哈希"""
    data = copy.deepcopy(config.raw)
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return build_config(data, config.path)


def worker_count() -> int:
    """
    只读推理的线程数：ODIP_THREADS 环境变量（可写在 .env 中），默认 min(4, CPU 数)
    """
    load_dotenv()
    value = os.getenv("ODIP_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError as e:
            raise ConfigError(f"ODIP_THREADS 必须是正整数: {value}") from e
    return min(4, os.cpu_count() or 1)
