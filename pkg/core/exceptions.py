#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : exceptions.py
@Time    : 2025/7/2 10:12
@Author  : zhouming
"""


class OdipError(Exception):
    """所有领域异常的基类"""


class NoOverlap(OdipError):
    """框与图像完全不相交"""


class PlacementInfeasible(OdipError):
    """采样器在最大尝试次数内无法满足重叠约束"""


class GraspExhausted(OdipError):
    """抓取在全部重试后仍失败"""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class DegenerateTask(OdipError):
    """查询图像没有任何候选框，任务无法计算损失"""


class EmptySupport(OdipError):
    """类别没有可用的支持图像"""


class NoGroundTruth(OdipError):
    """类别在评估集中没有真值，AP 无定义"""


class ConfigError(OdipError):
    """配置文件解析或校验失败"""


class SchemaError(OdipError):
    """标注文件不符合 schema"""


class CheckpointError(OdipError):
    """检查点缺失或不一致"""
