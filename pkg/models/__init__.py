#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/9 10:00
@Author  : zhouming

场景、抓取、检测器、数据库与指标的数据模型
"""
