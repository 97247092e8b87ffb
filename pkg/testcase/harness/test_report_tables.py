#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : test_report_tables.py
@Time    : 2025/7/16 15:30
@Author  : zhouming
"""
import math

import pandas as pd
import pytest

from models.metrics_model import CategoryAP, EvalResult, MetricsReport, PseudoQuality
from utility.report_utils.table_writer import (
    ablation_table,
    monotonicity_summary,
    pseudo_series,
    sequential_matrix,
    sizes_table,
    stage_table,
    write_tables,
)
from testcase.base_testcase import BaseTestCase


def _result(aps):
    per_category = {
        i: CategoryAP(i, name, ap, min(1.0, ap + 0.2), 5, 3) for i, (name, ap) in enumerate(aps.items())
    }
    overall = sum(aps.values()) / len(aps) if aps else None
    return EvalResult(per_category, overall, None if overall is None else min(1.0, overall + 0.2), 5 * len(aps), 3 * len(aps))


def _report(stage, aps, mean_iou=None):
    quality = PseudoQuality(mean_iou, 0.8, 0.7, 10, 12) if mean_iou is not None else None
    return MetricsReport(
        stage=stage,
        mode="joint",
        sparse=_result(aps),
        dense=_result({k: v / 2 for k, v in aps.items()}),
        pseudo_quality=quality,
        database_sizes={"udo": 4 * stage, "moa": 4 * stage, "support": 12 * stage, "pseudo": 4 * stage},
        categories=tuple(aps),
        config_hash="h",
    )


REPORTS = [
    _report(1, {"cube": 0.2}, 0.55),
    _report(2, {"cube": 0.3, "can": 0.1}, 0.6),
    _report(3, {"cube": 0.4, "can": 0.2}, 0.58),
]


class TestTables(BaseTestCase):
    """阶段汇总表"""

    def test_stage_table_columns(self):
        frame = stage_table(REPORTS, "sparse")
        assert list(frame.columns) == ["stage", "images_collected", "AP", "AP50", "AP[cube]", "AP[can]"]
        assert frame["images_collected"].tolist() == [8, 16, 24]
        assert math.isnan(frame.loc[0, "AP[can]"])
        assert frame.loc[1, "AP"] == pytest.approx(0.2)

    def test_dense_uses_dense_results(self):
        assert stage_table(REPORTS, "dense").loc[2, "AP[cube]"] == pytest.approx(0.2)

    def test_unknown_eval_set(self):
        with pytest.raises(ValueError):
            stage_table(REPORTS, "medium")

    def test_sequential_matrix_lower_triangular(self):
        matrix = sequential_matrix(REPORTS, "sparse")
        assert list(matrix.columns) == ["cube", "can"]
        assert matrix.index.tolist() == [1, 2, 3]
        assert matrix.loc[1, "can"] != matrix.loc[1, "can"]

    def test_pseudo_series_and_summary(self):
        series = pseudo_series([_report(1, {"cube": 0.1})] + REPORTS[1:])
        assert math.isnan(series.loc[0, "mean_iou"]) and series.loc[0, "n_pseudo"] == 0
        summary = monotonicity_summary(series)
        assert "0/1" in summary
        assert "-0.0200" in summary

    def test_summary_needs_two_points(self):
        assert "数据不足" in monotonicity_summary(pseudo_series(REPORTS[:1]))

    def test_sizes_table(self):
        frame = sizes_table(REPORTS)
        assert frame["support"].tolist() == [12, 24, 36]

    def test_ablation_default_stages(self):
        runs = {"joint": REPORTS, "moa-only": REPORTS[:2]}
        frame = ablation_table(runs, "sparse")
        assert list(frame.columns) == ["mode", "stage 2"]
        assert frame["stage 2"].tolist() == [pytest.approx(0.2), pytest.approx(0.2)]

    def test_ablation_missing_stage(self):
        frame = ablation_table({"joint": REPORTS[:2]}, "dense", stages=[1, 3])
        assert frame.loc[0, "stage 1"] == pytest.approx(0.1)
        assert math.isnan(frame.loc[0, "stage 3"])


class TestWriteTables(BaseTestCase):
    """表格写出"""

    def test_csv_and_text(self, tmp_path):
        written = write_tables({"stages_sparse": stage_table(REPORTS, "sparse")}, tmp_path)
        frame = pd.read_csv(written["stages_sparse"])
        assert frame["stage"].tolist() == [1, 2, 3]
        assert (tmp_path / "stages_sparse.txt").exists()
        assert not (tmp_path / "report.xlsx").exists()

    def test_workbook(self, tmp_path):
        tables = {
            "stages_dense": stage_table(REPORTS, "dense"),
            "sequential_dense": sequential_matrix(REPORTS, "dense"),
        }
        write_tables(tables, tmp_path, xlsx=True, index_tables=("sequential_dense",))
        sheets = pd.read_excel(tmp_path / "report.xlsx", sheet_name=None, engine="openpyxl")
        assert set(sheets) == {"stages_dense", "sequential_dense"}
        assert sheets["stages_dense"]["stage"].tolist() == [1, 2, 3]
