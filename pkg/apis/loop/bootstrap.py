#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : bootstrap.py
@Time    : 2025/7/10 09:20
@Author  : zhouming
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from loguru import logger
from tqdm import tqdm

from core.detector import FewShotDetector, FineTuneMode
from core.scene_generator import SceneGenerator, generate_scene
from models.database_model import EntrySource, ImageRecord, ImageRole
from models.detector_model import DetectorParams, FineTuneTrace, MetaTask
from models.scene_model import TableKind
from utility.seed_utils.seeding import BOOTSTRAP_NAMESPACE, derive_seed, make_rng


@dataclass(frozen=True)
class BootstrapConfig:
    """基础类预训练参数"""

    n_scenes: int = 48
    count_range: Tuple[int, int] = (2, 5)
    k: int = 3
    lr: Optional[float] = None

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError(f"预训练场景数至少为1: {self.n_scenes}")
        if self.k < 1:
            raise ValueError(f"k 至少为1: {self.k}")


def bootstrap_pretrain(
    detector: FewShotDetector,
    generator: SceneGenerator,
    config: BootstrapConfig,
    seed: int,
    show_progress: bool = False,
    trace: Optional[FineTuneTrace] = None,
) -> DetectorParams:
    """
    只用基础类训练初始检测器 f_θ0

    在只含基础物体的稀疏场景上，以完整真值构造每个 (场景, 基础类) 的任务，
    从默认度量出发微调至收敛。新类数据在此阶段完全不可见。

    Args:
        detector: 检测器
        generator: 场景生成器
        config: 预训练参数
        seed: 主种子
        show_progress: 是否显示进度条
        trace: 可选的微调过程记录

    Returns:
        DetectorParams: f_θ0
    """
    base = generator.registry.base()
    if not base:
        raise ValueError("预训练至少需要一个基础类")

    supports: Dict[int, List[ImageRecord]] = {}
    views = generator.config.views_per_grasp
    for category in base:
        obj = generator.sample_object(category, make_rng(seed, BOOTSTRAP_NAMESPACE, "object", category.id))
        view_seed = derive_seed(seed, BOOTSTRAP_NAMESPACE, "views", category.id)
        supports[category.id] = [
            ImageRecord(
                f"boot-sup-{category.id}-v{v}",
                generator.render_support_view(obj, v, view_seed).raster,
                ImageRole.SUPPORT,
                category,
                view_index=v,
            )
            for v in range(views)
        ]
    support_sets = {c.id: detector.build_support_set(c, supports[c.id][-config.k:]) for c in base}

    tasks = []
    for index in tqdm(range(config.n_scenes), desc="预训练场景", disable=not show_progress):
        spec = generator.sample_scene_spec(
            TableKind.B_TABLE, set(base), config.count_range, derive_seed(seed, BOOTSTRAP_NAMESPACE, "scene", index)
        )
        scene = generate_scene(spec)
        record = ImageRecord(
            f"boot-{index:04d}", scene.raster, ImageRole.BOOTSTRAP, scene.ground_truth[0].category
        )
        for category in base:
            positives = tuple(a for a in scene.ground_truth if a.category == category)
            tasks.append(MetaTask(record, support_sets[category.id], positives, EntrySource.GROUND_TRUTH))

    trace = trace if trace is not None else FineTuneTrace()
    lr = config.lr if config.lr is not None else detector.config.finetune_lr
    params = detector.fine_tune(
        DetectorParams.initial(detector.config), tasks, lr, FineTuneMode.UNTIL_CONVERGENCE, trace=trace
    )
    logger.info(
        f"f_θ0 预训练完成: 基础类 {len(base)}, 任务 {len(tasks)}, 步数 {trace.steps}, "
        f"收敛 {trace.converged}, τ={params.tau:.4f}"
    )
    return params
