#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : grasp_simulator.py
@Time    : 2025/7/4 14:10
@Author  : zhouming
"""
from typing import Collection, Optional, Tuple

import numpy as np
from loguru import logger

from core.exceptions import GraspExhausted, NoOverlap
from core.geometry import Annotation, BBox, CategoryId, clip_to_image
from core.scene_generator import B_TABLE_MAX_BASE, SceneGenerator, generate_scene
from models.database_model import ImageRecord, ImageRole
from models.grasp_model import Environment, GorResult, GraspModel, PlacementNoise
from models.scene_model import TableKind
from utility.seed_utils.seeding import derive_seed


def estimate_release_bbox(
    true_box: BBox, noise: PlacementNoise, width: int, height: int, seed: int
) -> BBox:
    """
    由机器人释放位姿估计的粗糙一次性标注框

    中心加高斯噪声，宽高各乘 (1 + N(0, scale_sigma))，最后裁剪到图像内。

    Args:
        true_box: 被释放物体的真实框
        noise: 噪声模型
        width: 图像宽
        height: 图像高
        seed: 随机种子

    Returns:
        BBox: 估计框
    """
    if noise.is_zero:
        return true_box
    rng = np.random.default_rng(seed)
    dx, dy = rng.normal(0.0, noise.center_sigma, size=2) if noise.center_sigma > 0 else (0.0, 0.0)
    sw, sh = 1.0 + rng.normal(0.0, noise.scale_sigma, size=2) if noise.scale_sigma > 0 else (1.0, 1.0)
    cx, cy = true_box.center
    # 尺度因子下限保证框非退化
    est = BBox.from_center(
        cx + float(dx), cy + float(dy), true_box.width * max(float(sw), 0.1), true_box.height * max(float(sh), 0.1)
    )
    try:
        return clip_to_image(est, width, height)
    except NoOverlap:
        logger.warning(f"估计框 {est.to_list()} 完全越界，退回真实框")
        return clip_to_image(true_box, width, height)


class GraspSimulator:
    """模拟抓取系统与完整的 GOR 交互"""

    def __init__(self, generator: SceneGenerator):
        """
        初始化抓取模拟器

        Args:
            generator: 场景生成器，负责桌面布置与特写视图
        """
        self.generator = generator

    def reset_environment(
        self,
        round_category: CategoryId,
        base_categories: Collection[CategoryId],
        n_novel: Tuple[int, int],
        n_base: Tuple[int, int],
        seed: int,
    ) -> Environment:
        """
        清空 B-table 并重新散布基础物体，同时重新布置 N-table

        Args:
            round_category: 本轮新类
            base_categories: 基础类集合
            n_novel: N-table 物体数量范围
            n_base: B-table 基础物体数量范围，上限必须小于6
            seed: 随机种子

        Returns:
            Environment: 新环境
        """
        if n_base[1] > B_TABLE_MAX_BASE:
            raise ValueError(f"B-table 基础物体数必须少于6: {n_base}")
        if not round_category.is_novel:
            raise ValueError(f"轮次类别必须是新类: {round_category.name}")
        n_spec = self.generator.sample_scene_spec(
            TableKind.N_TABLE, {round_category}, n_novel, derive_seed(seed, "env", "n-table")
        )
        b_spec = self.generator.sample_scene_spec(
            TableKind.B_TABLE, set(base_categories), n_base, derive_seed(seed, "env", "b-table")
        )
        return Environment(n_spec, generate_scene(n_spec), b_spec, generate_scene(b_spec), round_category, seed)

    def gor_round(self, env: Environment, grasp: GraspModel, seed: int, tag: Optional[str] = None) -> GorResult:
        """
        执行一次 Grasp-Observe-Release 交互

        (1) 取走物体前拍摄 N-table 作为 UDO 图像；(2) 均匀选取物体并按成功率抓取，
        失败时仅重启抓取；(3) 拍摄多视角特写作为支持图像；(4) 在 B-table 上无碰撞释放，
        拍摄 MOA 图像并由释放位姿估计一次性标注。

        Args:
            env: 环境，会被原地修改
            grasp: 抓取模型
            seed: 随机种子
            tag: 图像ID后缀，默认由种子生成

        Returns:
            GorResult: 采集结果

        Raises:
            GraspExhausted: 全部重试失败
            PlacementInfeasible: B-table 上找不到无碰撞释放位置
        """
        if not env.n_spec.objects:
            raise ValueError("N-table 上已没有物体")
        if any(o.spec.category.is_novel for o in env.b_spec.objects):
            raise ValueError("释放前 B-table 不应含新类物体")

        tag = tag or f"{seed:016x}"
        rng = np.random.default_rng(seed)
        category = env.round_category
        udo = ImageRecord(f"udo-{tag}", env.n_scene.raster, ImageRole.UDO, category)
        udo_truth = env.n_scene.ground_truth

        attempts = 0
        picked = None
        while attempts <= grasp.max_retries:
            attempts += 1
            index = int(rng.integers(len(env.n_spec.objects)))
            if rng.random() < grasp.success_probability:
                picked = index
                break
            logger.debug(f"[{tag}] 第 {attempts} 次抓取失败，重启抓取")
        if picked is None:
            raise GraspExhausted(f"[{tag}] {attempts} 次抓取全部失败", attempts=attempts)

        obj = env.n_spec.objects[picked].spec
        env.n_spec = env.n_spec.without_object(picked)
        env.n_scene = generate_scene(env.n_spec)

        view_seed = derive_seed(seed, "views")
        supports = tuple(
            ImageRecord(
                f"sup-{tag}-v{v}",
                self.generator.render_support_view(obj, v, view_seed).raster,
                ImageRole.SUPPORT,
                category,
                view_index=v,
            )
            for v in range(self.generator.config.views_per_grasp)
        )

        env.b_spec = self.generator.place_object(env.b_spec, obj, rng)
        env.b_scene = generate_scene(env.b_spec)
        true_box = env.b_scene.ground_truth[-1].box
        est_box = estimate_release_bbox(
            true_box, grasp.noise, env.b_spec.width, env.b_spec.height, derive_seed(seed, "release")
        )
        moa = ImageRecord(f"moa-{tag}", env.b_scene.raster, ImageRole.MOA, category)
        label = Annotation(est_box, category)
        logger.debug(f"[{tag}] GOR 完成: 尝试 {attempts} 次, 释放框 {est_box.to_list()}")
        return GorResult(udo, supports, moa, label, udo_truth, env.b_scene.ground_truth, attempts)
