#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/8 09:30
@Author  : zhouming

核心引擎：几何、场景生成、抓取模拟、检测器与评估
"""
