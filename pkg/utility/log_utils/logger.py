#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : logger.py
@Time    : 2025/6/10 17:05
@Author  : zhouming
"""
import sys
from pathlib import Path
from typing import List, Optional, Union

from loguru import logger

RUN_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[run]}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)
NO_RUN = "-"


class Logger:
    """
    运行日志

    控制台彩色输出到 stderr，可选一个按运行目录存放的滚动文件；
    每条记录带上运行标签（配置哈希前缀），便于在消融的多份日志之间对照。
    """

    def __init__(
        self,
        log_path: Optional[Union[str, Path]] = None,
        level: str = "INFO",
        run_tag: str = NO_RUN,
        rotation: str = "10 MB",
        retention: str = "1 week",
        colorize: bool = True,
    ):
        """
        Args:
            log_path: 日志文件路径，None 时只输出到控制台
            level: 日志级别
            run_tag: 写入每条记录 extra["run"] 的运行标签
            rotation: 文件轮转大小
            retention: 文件保留时间
            colorize: 控制台是否彩色输出
        """
        self.level = level
        self.run_tag = run_tag
        self.rotation = rotation
        self.retention = retention
        self.colorize = colorize
        self.file_paths: List[Path] = [Path(log_path)] if log_path else []
        self._handlers: List[int] = []
        self._install()

    def _install(self) -> None:
        logger.remove()
        logger.configure(extra={"run": self.run_tag})
        self._handlers = [
            logger.add(sys.stderr, format=RUN_FORMAT, level=self.level, colorize=self.colorize, diagnose=False)
        ]
        for path in self.file_paths:
            self._add_file(path)

    def _add_file(self, log_path: Path) -> int:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handler = logger.add(
            str(log_path),
            format=RUN_FORMAT,
            level=self.level,
            rotation=self.rotation,
            retention=self.retention,
            encoding="utf-8",
            enqueue=True,
            diagnose=False,
        )
        self._handlers.append(handler)
        return handler

    def add_file_sink(self, log_path: Union[str, Path]) -> int:
        """追加文件处理器，目录不存在时自动创建；返回 loguru 处理器ID"""
        log_path = Path(log_path)
        self.file_paths.append(log_path)
        return self._add_file(log_path)

    def set_level(self, level: str) -> None:
        """修改级别，控制台和文件处理器一起重建"""
        self.level = level
        self._install()

    def set_run_tag(self, run_tag: str) -> None:
        self.run_tag = run_tag
        logger.configure(extra={"run": run_tag})

    def close(self) -> None:
        """等待异步写入完成并移除本实例添加的处理器"""
        logger.complete()
        for handler in self._handlers:
            try:
                logger.remove(handler)
            except ValueError:
                pass
        self._handlers = []


def get_logger(log_path: Optional[Union[str, Path]] = None, **kwargs) -> Logger:
    return Logger(log_path=log_path, **kwargs)
