#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : __init__.py
@Time    : 2025/7/10 09:00
@Author  : zhouming
"""
