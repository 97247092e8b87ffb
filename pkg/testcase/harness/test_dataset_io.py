#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : test_dataset_io.py
@Time    : 2025/7/16 10:45
@Author  : zhouming
"""
import json

import numpy as np
import pytest

from apis.harness.dataset_io import (
    AnnotationFile,
    AnnotationSource,
    export_scenes,
    read_annotation_file,
    read_png,
    validate_annotation_document,
    write_annotation_file,
    write_png,
)
from core.exceptions import SchemaError
from core.geometry import Annotation
from models.scene_model import TableKind
from testcase.base_testcase import CAN, CUBE, TAPE, WEDGE, BaseTestCase, box, gt


def _document() -> AnnotationFile:
    return AnnotationFile(
        "eval-sparse-0000",
        128,
        96,
        (
            (gt(box(1, 2, 30, 40)), AnnotationSource.GROUND_TRUTH),
            (Annotation(box(50.5, 10, 70.25, 33), CAN, True, 0.72), AnnotationSource.PSEUDO),
            (gt(box(80, 60, 100, 90), TAPE), AnnotationSource.ROBOT_ESTIMATE),
        ),
    )


class TestAnnotationFile(BaseTestCase):
    """标注文件读写"""

    def test_write_then_read(self, tmp_path):
        document = _document()
        path = write_annotation_file(tmp_path / "ann" / "a.json", document)
        assert read_annotation_file(path) == document

    def test_document_layout(self, tmp_path):
        path = write_annotation_file(tmp_path / "a.json", _document())
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["schema_version"] == 1
        assert data["records"][1]["source"] == "pseudo"
        assert data["records"][1]["box"] == [50.5, 10.0, 70.25, 33.0]
        assert data["records"][2]["role"] == "base"

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.pop("width"),
            lambda d: d.update(schema_version=2),
            lambda d: d.update(extra=True),
            lambda d: d["records"][0].update(confidence=1.5),
            lambda d: d["records"][0].update(source="guess"),
            lambda d: d["records"][0].update(box=[0, 0, 5]),
        ],
    )
    def test_bad_document_rejected(self, mutate):
        data = _document().to_dict()
        mutate(data)
        with pytest.raises(SchemaError):
            validate_annotation_document(data)

    def test_degenerate_box_rejected(self):
        data = _document().to_dict()
        data["records"][0]["box"] = [10, 10, 10, 20]
        with pytest.raises(SchemaError):
            AnnotationFile.from_dict(data)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(SchemaError):
            read_annotation_file(path)


class TestPng(BaseTestCase):
    """PNG 无损读写"""

    def test_lossless(self, tmp_path):
        raster = np.random.default_rng(3).integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
        path = write_png(tmp_path / "img" / "x.png", raster)
        assert np.array_equal(read_png(path), raster)


class TestExportScenes(BaseTestCase):
    """评估集导出"""

    def test_manifest_and_files(self, generator, tmp_path):
        scenes = generator.make_eval_dataset(TableKind.EVAL_SPARSE, 2, [CUBE, CAN], [WEDGE, TAPE], seed=3)
        manifest_path = export_scenes(scenes, tmp_path, "eval-sparse", {"seed": 3, "kind": "eval-sparse"})
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        assert manifest["n_images"] == 2 and manifest["seed"] == 3
        for entry, scene in zip(manifest["images"], scenes):
            assert np.array_equal(read_png(tmp_path / entry["image"]), scene.raster)
            document = read_annotation_file(tmp_path / entry["annotations"])
            assert [ann for ann, _ in document.records] == list(scene.ground_truth)
            assert all(source == AnnotationSource.GROUND_TRUTH for _, source in document.records)
            assert entry["n_objects"] == len(scene.ground_truth)
