#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/2 14:00
@Author  : zhouming

loguru 日志封装
"""
