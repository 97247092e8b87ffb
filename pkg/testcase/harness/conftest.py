#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : conftest.py
@Time    : 2025/7/16 09:40
@Author  : zhouming
"""
import copy

import pytest
import yaml

MINIMAL_CONFIG = {
    "seed": 5,
    "run": {"T": 1, "N": 1, "L": 2, "eta": 0.0001, "k": 2, "n_novel": [3, 4], "n_base": [2, 3], "max_tasks": 16},
    "categories": {
        "novel": [{"id": 0, "name": "cube", "archetype": "square", "hue": 0.0}],
        "base": [
            {"id": 10, "name": "wedge", "archetype": "triangle", "hue": 0.05},
            {"id": 11, "name": "tape", "archetype": "ring", "hue": 0.58},
        ],
    },
    "bootstrap": {"n_scenes": 4, "count_range": [2, 3], "k": 2},
    "eval": {"sparse_images": 2, "dense_images": 2},
    "output": {"dir": "runs/test", "xlsx": False, "log_level": "WARNING"},
}


@pytest.fixture
def minimal_config():
    """可随意修改的最小配置字典"""
    return copy.deepcopy(MINIMAL_CONFIG)


@pytest.fixture
def write_config(tmp_path):
    """把配置字典写成 YAML 文件并返回路径"""

    def _write(data, name="experiment.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, allow_unicode=True, sort_keys=False), encoding="utf-8")
        return path

    return _write
