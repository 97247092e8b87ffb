#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : run_odip.py
@Time    : 2025/7/12 17:20
@Author  : zhouming
"""
import sys

from apis.harness.cli import main

if __name__ == '__main__':
    sys.exit(main())
