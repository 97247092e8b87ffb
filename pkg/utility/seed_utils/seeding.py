#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : seeding.py
@Time    : 2025/7/2 14:05
@Author  : zhouming
"""
import hashlib
from typing import Union

import numpy as np

# 训练期采集与评估集使用互不相交的命名空间
TRAIN_NAMESPACE = "train"
EVAL_NAMESPACE = "eval"
BOOTSTRAP_NAMESPACE = "bootstrap"
SUPPORT_NAMESPACE = "support"
TASK_NAMESPACE = "task"

SeedKey = Union[int, str]


def derive_seed(master_seed: int, namespace: str, *keys: SeedKey) -> int:
    """
    由主种子、命名空间和任意键派生出确定性的 63 位种子

    Args:
        master_seed: 主种子
        namespace: 命名空间
        *keys: 阶段、类别、轮次等

    Returns:
        int: 派生种子
    """
    text = "/".join([str(int(master_seed)), namespace, *(str(k) for k in keys)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def make_rng(master_seed: int, namespace: str, *keys: SeedKey) -> np.random.Generator:
    """按派生种子创建 numpy 随机数生成器"""
    return np.random.default_rng(derive_seed(master_seed, namespace, *keys))
