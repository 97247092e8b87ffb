#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : path_get.py
@Time    : 2025/6/10 14:45
@Author  : zhouming
"""
from pathlib import Path

ROOT_MARKER = Path("config") / "experiment_config.yaml"


def find_project_root() -> Path:
    """获取项目根目录（包含 config/experiment_config.yaml 的目录）"""
    project_root = Path(__file__).resolve().parents[2]
    if not (project_root / ROOT_MARKER).exists():
        raise RuntimeError(f"项目根目录 {project_root} 下缺少 {ROOT_MARKER}")
    return project_root


def get_config_path(name: str = "experiment_config.yaml") -> Path:
    """获取 config/ 下的配置文件路径"""
    return find_project_root() / "config" / name


def resolve_output_dir(path: Path) -> Path:
    """相对路径的输出目录按项目根目录解析"""
    path = Path(path)
    return path if path.is_absolute() else find_project_root() / path
