#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : test_scene_generator.py
@Time    : 2025/7/14 10:20
@Author  : zhouming
"""
import itertools

import numpy as np
import pytest

from core.geometry import BBox, CategoryRole
from core.scene_generator import SceneGenerator, generate_scene
from models.scene_model import SceneConfig, TableKind
from testcase.base_testcase import CAN, CUBE, TAPE, WEDGE, BaseTestCase

SAMPLED_KINDS = (
    (TableKind.EVAL_SPARSE, {CUBE, CAN, WEDGE, TAPE}, (4, 7)),
    (TableKind.EVAL_DENSE, {CUBE, CAN, WEDGE, TAPE}, (14, 22)),
    (TableKind.B_TABLE, {WEDGE, TAPE}, (2, 5)),
    (TableKind.N_TABLE, {CUBE}, (6, 10)),
)


class TestSceneGenerator(BaseTestCase):
    """场景采样与渲染"""

    def test_render_is_deterministic(self, generator):
        spec = generator.sample_scene_spec(TableKind.EVAL_SPARSE, {CUBE, CAN, WEDGE}, (4, 7), seed=21)
        first, second = generate_scene(spec), generate_scene(spec)
        assert np.array_equal(first.raster, second.raster)
        assert first.ground_truth == second.ground_truth

    def test_sampler_is_deterministic(self, generator):
        a = generator.sample_scene_spec(TableKind.EVAL_SPARSE, {CUBE, TAPE}, (4, 7), seed=8)
        b = generator.sample_scene_spec(TableKind.EVAL_SPARSE, {CUBE, TAPE}, (4, 7), seed=8)
        assert a == b

    def test_sparse_count_in_range(self, generator):
        for seed in range(10):
            spec = generator.sample_scene_spec(TableKind.EVAL_SPARSE, {CUBE, CAN, WEDGE, TAPE}, (4, 7), seed)
            assert 4 <= len(spec.objects) <= 7

    def test_single_object(self, generator):
        spec = generator.sample_scene_spec(TableKind.EVAL_SPARSE, {CAN}, (1, 1), seed=2)
        assert len(spec.objects) == 1
        assert len(generate_scene(spec).ground_truth) == 1

    def test_n_table_shares_category(self, generator):
        spec = generator.sample_scene_spec(TableKind.N_TABLE, {CAN}, (6, 10), seed=4)
        assert {o.spec.category for o in spec.objects} == {CAN}
        generator.validate_scene_spec(spec)

    @pytest.mark.parametrize(
        "kind, pool, count_range",
        [
            (TableKind.N_TABLE, {CUBE, CAN}, (1, 2)),
            (TableKind.N_TABLE, {WEDGE}, (1, 2)),
            (TableKind.B_TABLE, {CUBE}, (1, 2)),
            (TableKind.B_TABLE, {WEDGE}, (1, 6)),
            (TableKind.EVAL_DENSE, {CUBE}, (14, 23)),
            (TableKind.EVAL_SPARSE, set(), (1, 2)),
            (TableKind.EVAL_SPARSE, {CUBE}, (3, 2)),
        ],
    )
    def test_incompatible_pool_rejected(self, generator, kind, pool, count_range):
        with pytest.raises(ValueError):
            generator.sample_scene_spec(kind, pool, count_range, seed=0)

    def test_b_table_with_released_novel(self, generator):
        spec = generator.sample_scene_spec(TableKind.B_TABLE, {WEDGE, TAPE}, (5, 5), seed=13)
        rng = np.random.default_rng(13)
        spec = generator.place_object(spec, generator.sample_object(CUBE, rng), rng)
        scene = generate_scene(spec)
        assert len(scene.ground_truth) == 6
        assert sum(1 for a in scene.ground_truth if a.category.role == CategoryRole.NOVEL) == 1
        generator.validate_scene_spec(spec)

    def test_tight_box_property(self, generator):
        spec = generator.sample_scene_spec(TableKind.EVAL_DENSE, {CUBE, CAN, WEDGE, TAPE}, (14, 22), seed=31)
        scene = generate_scene(spec)
        for index, (placed, annotation) in enumerate(zip(spec.objects, scene.ground_truth)):
            drawn = scene.label_map == index
            assert annotation.box == BBox.from_mask(drawn)
            assert annotation.category == placed.spec.category
            assert np.all(scene.raster[drawn] == np.asarray(placed.spec.color, dtype=np.uint8))

    def test_constraints_hold_over_samples(self, generator):
        for kind, pool, count_range in SAMPLED_KINDS:
            for seed in range(25):
                spec = generator.sample_scene_spec(kind, pool, count_range, seed)
                generator.validate_scene_spec(spec)

    @pytest.mark.slow
    @pytest.mark.parametrize("kind, pool, count_range", SAMPLED_KINDS)
    def test_constraints_hold_over_thousand_samples(self, generator, kind, pool, count_range):
        for seed in range(1000):
            spec = generator.sample_scene_spec(kind, pool, count_range, 10_000 + seed)
            generator.validate_scene_spec(spec)
            assert count_range[0] <= len(spec.objects) <= count_range[1]


class TestEvalDataset(BaseTestCase):
    """留出评估集"""

    def test_dense_at_most_22(self, generator):
        scenes = generator.make_eval_dataset(TableKind.EVAL_DENSE, 3, [CUBE, CAN], [WEDGE, TAPE], seed=5)
        assert len(scenes) == 3
        assert all(len(s.ground_truth) <= 22 for s in scenes)

    def test_fixed_seed_identical(self, generator):
        a = generator.make_eval_dataset(TableKind.EVAL_SPARSE, 2, [CUBE, CAN], [WEDGE], seed=9)
        b = generator.make_eval_dataset(TableKind.EVAL_SPARSE, 2, [CUBE, CAN], [WEDGE], seed=9)
        assert all(np.array_equal(x.raster, y.raster) for x, y in zip(a, b))

    def test_zero_images_rejected(self, generator):
        with pytest.raises(ValueError):
            generator.make_eval_dataset(TableKind.EVAL_SPARSE, 0, [CUBE], [WEDGE], seed=1)

    def test_training_kind_rejected(self, generator):
        with pytest.raises(ValueError):
            generator.make_eval_dataset(TableKind.B_TABLE, 2, [CUBE], [WEDGE], seed=1)


class TestSupportView(BaseTestCase):
    """抓取后的特写视图"""

    def test_same_inputs_identical(self, generator):
        obj = generator.sample_object(CUBE, np.random.default_rng(1))
        a = generator.render_support_view(obj, 1, seed=42)
        b = generator.render_support_view(obj, 1, seed=42)
        assert np.array_equal(a.raster, b.raster)

    def test_distinct_views_rotation_floor(self, generator):
        obj = generator.sample_object(CAN, np.random.default_rng(2))
        views = [generator.render_support_view(obj, v, seed=7) for v in range(generator.config.views_per_grasp)]
        floor = generator.config.view_rotation_floor
        for a, b in itertools.combinations(views, 2):
            assert abs(a.rotation - b.rotation) >= floor - 1e-12

    def test_zero_jitter_is_canonical(self, registry):
        generator = SceneGenerator(registry, SceneConfig().zero_jitter())
        obj = generator.sample_object(CUBE, np.random.default_rng(3))
        view = generator.render_support_view(obj, 0, seed=11)
        assert view.rotation == obj.rotation
        assert view.scale == generator.config.support_scale
        # 紧致裁剪加固定边距：四边都留有背景
        margin = generator.config.support_margin
        background = np.all(np.abs(view.raster.astype(int) - np.asarray(generator.config.support_background)) <= 8, axis=2)
        assert background[:margin].all() and background[-margin:].all()
        assert background[:, :margin].all() and background[:, -margin:].all()

    def test_view_index_out_of_range(self, generator):
        obj = generator.sample_object(CUBE, np.random.default_rng(4))
        with pytest.raises(ValueError):
            generator.render_support_view(obj, generator.config.views_per_grasp, seed=1)
