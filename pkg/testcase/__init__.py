#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/14 09:30
@Author  : zhouming

测试用例
"""
