#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/11 09:20
@Author  : zhouming

实验配置：YAML 文件与校验加载器
"""
