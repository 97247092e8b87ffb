#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : test_logs.py
@Time    : 2025/6/10 19:12
@Author  : zhouming
"""
from loguru import logger

from utility.log_utils.logger import get_logger


def test_file_sink_carries_run_tag(tmp_path):
    log_path = tmp_path / "logs" / "odip.log"
    log = get_logger(log_path, level="DEBUG", run_tag="3fa9c0d1e2b4", colorize=False)
    logger.info("stage 1 done")
    logger.debug("epoch 3")
    log.close()
    text = log_path.read_text(encoding="utf-8")
    assert "stage 1 done" in text and "epoch 3" in text
    assert "| 3fa9c0d1e2b4 |" in text


def test_set_level_rebuilds_handlers(tmp_path):
    log_path = tmp_path / "odip.log"
    log = get_logger(log_path, level="INFO", colorize=False)
    logger.debug("hidden")
    log.set_level("DEBUG")
    logger.debug("visible")
    log.close()
    text = log_path.read_text(encoding="utf-8")
    assert "visible" in text
    assert "hidden" not in text


def test_run_tag_switch(tmp_path):
    log = get_logger(level="INFO", colorize=False)
    log.add_file_sink(tmp_path / "a.log")
    log.set_run_tag("moa-only")
    logger.info("ablation")
    log.close()
    assert "| moa-only |" in (tmp_path / "a.log").read_text(encoding="utf-8")
