#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : table_writer.py
@Time    : 2025/7/12 10:05
@Author  : zhouming
"""
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from openpyxl.utils import get_column_letter

from models.metrics_model import MetricsReport

FLOAT_FORMAT = "%.6f"
EVAL_SETS = ("sparse", "dense")


def _result(report: MetricsReport, eval_set: str):
    if eval_set not in EVAL_SETS:
        raise ValueError(f"未知评估集: {eval_set}")
    return report.sparse if eval_set == "sparse" else report.dense


def _all_categories(reports: Sequence[MetricsReport]) -> List[str]:
    names: List[str] = []
    for report in reports:
        for name in report.categories:
            if name not in names:
                names.append(name)
    return names


def stage_table(reports: Sequence[MetricsReport], eval_set: str) -> pd.DataFrame:
    """每个阶段一行：阶段、已采集图像数、AP、AP50 以及各类别 AP"""
    names = _all_categories(reports)
    rows = []
    for report in reports:
        result = _result(report, eval_set)
        row = {
            "stage": report.stage,
            "images_collected": report.images_collected,
            "AP": result.overall_ap,
            "AP50": result.overall_ap50,
        }
        by_name = {c.name: c.ap for c in result.per_category.values()}
        for name in names:
            row[f"AP[{name}]"] = by_name.get(name, np.nan)
        rows.append(row)
    return pd.DataFrame(rows, columns=["stage", "images_collected", "AP", "AP50"] + [f"AP[{n}]" for n in names])


def sequential_matrix(reports: Sequence[MetricsReport], eval_set: str) -> pd.DataFrame:
    """按类别引入顺序排列的下三角 AP 矩阵：行是阶段，列是类别，尚未引入的类别为空"""
    names = _all_categories(reports)
    frame = stage_table(reports, eval_set).set_index("stage")[[f"AP[{n}]" for n in names]]
    frame.columns = names
    return frame


def pseudo_series(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        q = report.pseudo_quality
        rows.append(
            {
                "stage": report.stage,
                "mean_iou": q.mean_iou if q else np.nan,
                "precision": q.precision if q and q.precision is not None else np.nan,
                "recall": q.recall if q else np.nan,
                "n_pseudo": q.n_pseudo if q else 0,
            }
        )
    return pd.DataFrame(rows, columns=["stage", "mean_iou", "precision", "recall", "n_pseudo"])


def monotonicity_summary(series: pd.DataFrame, column: str = "mean_iou") -> str:
    """伪标注质量序列的单调性摘要"""
    values = series[column].dropna().to_numpy()
    if values.size < 2:
        return f"{column}: 数据不足，无法判断单调性"
    steps = np.diff(values)
    rising = int((steps >= 0).sum())
    return (
        f"{column}: {rising}/{steps.size} 个相邻阶段不下降，"
        f"首末变化 {values[-1] - values[0]:+.4f} ({values[0]:.4f} -> {values[-1]:.4f})"
    )


def sizes_table(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    rows = [dict(stage=r.stage, **r.database_sizes) for r in reports]
    return pd.DataFrame(rows)


def ablation_table(
    runs: Mapping[str, Sequence[MetricsReport]], eval_set: str = "dense", stages: Optional[Sequence[int]] = None
) -> pd.DataFrame:
    """
    消融对比：每种模式一行，列为指定阶段的 AP

    Args:
        runs: 模式 → 该模式的阶段报告
        eval_set: sparse 或 dense
        stages: 需要列出的阶段，默认取每隔一个阶段（2, 4, 6, ...）
    """
    if stages is None:
        last = max((r.stage for reports in runs.values() for r in reports), default=0)
        stages = list(range(2, last + 1, 2)) or [last]
    rows = []
    for mode, reports in runs.items():
        by_stage = {r.stage: _result(r, eval_set).overall_ap for r in reports}
        row = {"mode": mode}
        for stage in stages:
            value = by_stage.get(stage)
            row[f"stage {stage}"] = np.nan if value is None else value
        rows.append(row)
    return pd.DataFrame(rows, columns=["mode"] + [f"stage {s}" for s in stages])


def render_text(frame: pd.DataFrame, index: bool = False) -> str:
    return frame.to_string(index=index, float_format=lambda v: f"{v:.4f}", na_rep="-")


def write_tables(
    tables: Mapping[str, pd.DataFrame],
    out_dir: Union[str, Path],
    xlsx: bool = False,
    index_tables: Sequence[str] = (),
) -> Dict[str, Path]:
    """
    写出 CSV、对齐文本，可选写出一个 xlsx 工作簿（每张表一个工作表）

    Args:
        tables: 表名 → 表
        out_dir: 输出目录
        xlsx: 是否写工作簿
        index_tables: 需要保留索引列的表

    Returns:
        Dict[str, Path]: 表名 → CSV 路径
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, frame in tables.items():
        keep_index = name in index_tables
        csv_path = out_dir / f"{name}.csv"
        frame.to_csv(csv_path, index=keep_index, float_format=FLOAT_FORMAT, lineterminator="\n")
        (out_dir / f"{name}.txt").write_text(render_text(frame, keep_index) + "\n", encoding="utf-8")
        written[name] = csv_path

    if xlsx:
        workbook = out_dir / "report.xlsx"
        with pd.ExcelWriter(workbook, engine="openpyxl") as writer:
            for name, frame in tables.items():
                sheet = name[:31]
                frame.to_excel(writer, sheet_name=sheet, index=name in index_tables)
                worksheet = writer.sheets[sheet]
                columns = len(frame.columns) + (1 if name in index_tables else 0)
                for idx in range(1, columns + 1):
                    worksheet.column_dimensions[get_column_letter(idx)].width = 15
        logger.debug(f"已写入工作簿 {workbook}")
    return written
