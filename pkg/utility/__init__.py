#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/2 14:00
@Author  : zhouming

通用工具：日志、路径、随机种子与报表
"""
