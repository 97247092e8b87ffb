#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : loop_runner.py
@Time    : 2025/7/10 10:05
@Author  : zhouming
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from core.detector import FewShotDetector, FineTuneMode
from core.evaluator import EvalImage, evaluate_model, pseudo_quality
from core.exceptions import EmptySupport, GraspExhausted, PlacementInfeasible
from core.geometry import Annotation, CategoryId
from core.grasp_simulator import GraspSimulator
from models.database_model import DatabaseBundle, EntrySource, ImageRecord, ImageRole, JointEntry
from models.detector_model import DetectorParams, FineTuneTrace, MetaTask, SupportSet
from models.grasp_model import GraspModel
from models.metrics_model import EvalResult, MetricsReport
from models.scene_model import RenderedScene, TableKind
from utility.seed_utils.seeding import EVAL_NAMESPACE, SUPPORT_NAMESPACE, TASK_NAMESPACE, TRAIN_NAMESPACE, derive_seed

PseudoSet = List[Tuple[ImageRecord, Tuple[Annotation, ...]]]


class AblationMode(str, Enum):
    """D_All 的组成方式"""

    JOINT = "joint"
    UDO_ONLY = "udo-only"
    MOA_ONLY = "moa-only"
    # 以隐藏真值训练的全监督参照，不属于 ODIP 流程本身
    SUPERVISED = "supervised"


class SupportSampling(str, Enum):
    RECENT = "recent"
    RANDOM = "random"
    # 与查询图像同一 GOR 轮次采集的视图，只用于构造训练任务
    ROUND = "round"


@dataclass(frozen=True)
class RunConfig:
    """
    自适应循环参数

    T/N/L/eta/k 必须显式给出；schedule 为 (阶段, 该阶段引入的新类ID) 序列，为空时全部新类从第1阶段起激活。
    """

    T: int
    N: int
    L: int
    eta: float
    k: int
    schedule: Tuple[Tuple[int, Tuple[int, ...]], ...] = ()
    tau_pseudo: float = 0.6
    mode: AblationMode = AblationMode.JOINT
    warm_start: bool = False
    pseudo_cross_category: bool = False
    support_sampling: SupportSampling = SupportSampling.RECENT
    task_support_sampling: SupportSampling = SupportSampling.ROUND
    skip_unlabeled_pseudo: bool = True
    pseudo_mix_weight: float = 1.0
    finetune_lr: float = 0.2
    n_novel: Tuple[int, int] = (6, 10)
    n_base: Tuple[int, int] = (2, 5)
    max_tasks: int = 256
    contrast_tasks: bool = True
    max_round_restarts: int = 5

    def __post_init__(self):
        if self.T < 1 or self.N < 1:
            raise ValueError(f"T 和 N 至少为1: T={self.T}, N={self.N}")
        if self.L < 0:
            raise ValueError(f"L 必须非负: {self.L}")
        if self.eta <= 0 or self.finetune_lr <= 0:
            raise ValueError("学习率必须为正")
        if self.k < 1:
            raise ValueError(f"k 至少为1: {self.k}")
        if not 0.0 <= self.tau_pseudo <= 1.0:
            raise ValueError(f"tau_pseudo 必须在[0,1]内: {self.tau_pseudo}")
        if self.pseudo_mix_weight < 0:
            raise ValueError(f"pseudo_mix_weight 必须非负: {self.pseudo_mix_weight}")
        if self.max_tasks < 1:
            raise ValueError(f"max_tasks 至少为1: {self.max_tasks}")
        stages = [s for s, _ in self.schedule]
        if any(s < 1 or s > self.T for s in stages) or len(set(stages)) != len(stages):
            raise ValueError(f"类别引入计划非法: {self.schedule}")
        object.__setattr__(self, "mode", AblationMode(self.mode))
        object.__setattr__(self, "support_sampling", SupportSampling(self.support_sampling))
        object.__setattr__(self, "task_support_sampling", SupportSampling(self.task_support_sampling))
        if self.support_sampling == SupportSampling.ROUND:
            raise ValueError("support_sampling 不能为 round：伪标注与评估图像没有对应的采集轮次")

    def active_categories(self, stage: int, novel: Sequence[CategoryId]) -> List[CategoryId]:
        """第 stage 阶段激活的新类，按引入顺序排列"""
        if not self.schedule:
            return list(novel)
        by_id = {c.id: c for c in novel}
        active = []
        for introduced_at, ids in sorted(self.schedule):
            if introduced_at <= stage:
                active.extend(by_id[i] for i in ids)
        return active

    def expected_collections(self, stage: int, novel: Sequence[CategoryId]) -> int:
        return sum(self.N * len(self.active_categories(s, novel)) for s in range(1, stage + 1))


@dataclass
class StageState:
    """单一编排者持有的循环状态"""

    t: int
    bundle: DatabaseBundle
    params_0: DetectorParams
    params_current: DetectorParams
    categories: List[CategoryId] = field(default_factory=list)
    history: List[MetricsReport] = field(default_factory=list)
    master_seed: int = 0


def eval_images(kind: TableKind, scenes: Sequence[RenderedScene]) -> List[EvalImage]:
    """将渲染好的评估场景转换为 (图像记录, 隐藏真值) 序列"""
    return [
        (ImageRecord(f"{kind.value}-{i:04d}", s.raster, ImageRole.EVAL, s.ground_truth[0].category), s.ground_truth)
        for i, s in enumerate(scenes)
    ]


def _copy_bundle(bundle: DatabaseBundle) -> DatabaseBundle:
    return DatabaseBundle(
        udo=list(bundle.udo),
        moa=list(bundle.moa),
        support={k: list(v) for k, v in bundle.support.items()},
        pseudo=list(bundle.pseudo),
        hidden_truth=dict(bundle.hidden_truth),
    )


def build_joint_set(
    d_pseudo: Sequence[Tuple[ImageRecord, Sequence[Annotation]]],
    d_moa: Sequence[Tuple[ImageRecord, Annotation]],
    mode: AblationMode = AblationMode.JOINT,
) -> List[JointEntry]:
    """
    D_All = D_Pseudo ⊕ D_MOA：带来源标签的拼接，不去重

    udo-only 只保留 D_Pseudo，moa-only 只保留 D_MOA。
    """
    mode = AblationMode(mode)
    if mode == AblationMode.SUPERVISED:
        raise ValueError("全监督模式的训练集由隐藏真值构造，不经过 build_joint_set")
    entries: List[JointEntry] = []
    if mode in (AblationMode.JOINT, AblationMode.UDO_ONLY):
        entries.extend(JointEntry(record, tuple(anns), EntrySource.PSEUDO) for record, anns in d_pseudo)
    if mode in (AblationMode.JOINT, AblationMode.MOA_ONLY):
        entries.extend(JointEntry(record, (label,), EntrySource.MOA) for record, label in d_moa)
    return entries


class LoopRunner:
    """
    ODIP 分阶段自适应循环

    每个阶段：GOR 采集 → 伪标注 → 构造 D_All → 重置为 f_θ0 后微调至收敛 → MOA 微调 L 步 → 评估。
    """

    def __init__(
        self,
        simulator: GraspSimulator,
        detector: FewShotDetector,
        grasp: GraspModel,
        config: RunConfig,
        eval_sets: Optional[Mapping[str, Sequence[EvalImage]]] = None,
        config_hash: str = "",
        workers: int = 1,
        show_progress: bool = False,
    ):
        """
        初始化循环

        Args:
            simulator: 抓取模拟器
            detector: 检测器
            grasp: 抓取模型
            config: 循环参数
            eval_sets: {"sparse": ..., "dense": ...} 留出评估集
            config_hash: 写入每份报告的配置哈希
            workers: 只读推理的并行线程数
            show_progress: 是否显示进度条
        """
        self.simulator = simulator
        self.detector = detector
        self.grasp = grasp
        self.config = config
        self.eval_sets = dict(eval_sets or {})
        self.config_hash = config_hash
        self.workers = max(1, int(workers))
        self.show_progress = show_progress

    @property
    def novel(self) -> List[CategoryId]:
        return self.simulator.generator.registry.novel()

    def initial_state(self, params_0: DetectorParams, master_seed: int) -> StageState:
        return StageState(0, DatabaseBundle(), params_0, params_0, [], [], int(master_seed))

    # ---------- 采集 ----------

    def _collect_round(self, bundle: DatabaseBundle, stage: int, category: CategoryId, index: int, seed: int) -> None:
        base = self.simulator.generator.registry.base()
        tag = f"s{stage:02d}-c{category.id}-r{index:02d}"
        for restart in range(self.config.max_round_restarts + 1):
            round_seed = derive_seed(seed, TRAIN_NAMESPACE, stage, category.id, index, restart)
            try:
                env = self.simulator.reset_environment(
                    category, base, self.config.n_novel, self.config.n_base, derive_seed(round_seed, "env")
                )
                result = self.simulator.gor_round(env, self.grasp, derive_seed(round_seed, "gor"), tag=tag)
                break
            except (GraspExhausted, PlacementInfeasible) as e:
                if restart == self.config.max_round_restarts:
                    logger.error(f"[{tag}] 连续 {restart + 1} 次交互失败，终止本阶段: {e}")
                    raise
                logger.warning(f"[{tag}] 交互失败，以新种子重启本轮: {e}")
        meta = dict(stage=stage, round_index=index)
        bundle.add_udo(replace(result.udo_image, **meta), result.udo_truth)
        for view in result.support_images:
            bundle.add_support(replace(view, **meta))
        bundle.add_moa(replace(result.moa_image, **meta), result.one_shot_label, result.moa_truth)

    # ---------- 支持集与任务 ----------

    def sample_supports(
        self,
        bundle: DatabaseBundle,
        category: CategoryId,
        k: int,
        seed: int,
        policy: Optional[SupportSampling] = None,
        query: Optional[ImageRecord] = None,
    ) -> SupportSet:
        """
        从 D_Support 采样 k 张支持图像

        policy 缺省取 support_sampling。round 取与 query 同一阶段、同一轮次的视图，
        query 缺失或该轮没有视图时退回带种子的随机采样。

        Raises:
            EmptySupport: 该类别还没有任何支持图像
        """
        pool = bundle.supports_of(category)
        if not pool:
            raise EmptySupport(f"类别 {category.name or category.id} 没有支持图像")
        policy = SupportSampling(policy or self.config.support_sampling)
        if policy == SupportSampling.ROUND:
            same_round = [] if query is None else [
                s for s in pool if (s.stage, s.round_index) == (query.stage, query.round_index)
            ]
            if same_round:
                return self.detector.build_support_set(category, same_round[-k:])
            policy = SupportSampling.RANDOM
        if policy == SupportSampling.RECENT or len(pool) <= k:
            shots = pool[-k:]
        else:
            picks = np.sort(np.random.default_rng(seed).choice(len(pool), size=k, replace=False))
            shots = [pool[i] for i in picks]
        return self.detector.build_support_set(category, shots)

    def _unlabeled_pseudo(self, entry: JointEntry) -> bool:
        return self.config.skip_unlabeled_pseudo and entry.source == EntrySource.PSEUDO

    def sample_task_set(
        self, pool: Sequence[JointEntry], bundle: DatabaseBundle, k: int, n_tasks: int, seed: int
    ) -> List[MetaTask]:
        """
        由带标签的图像集构造任务集

        每条被选中的条目与其轮次类别的 k 张支持图像配对（取法见 task_support_sampling），正样本只保留该类别的标注；
        开启 contrast_tasks 时再为同一查询配一个其他类别的支持集，使该类物体之外的实例成为负样本。
        开启 skip_unlabeled_pseudo 时，没有伪标注的 UDO 图像不构造本类任务，只保留对比任务。
        """
        if not pool:
            return []
        rng = np.random.default_rng(seed)
        weights = np.array(
            [self.config.pseudo_mix_weight if e.source == EntrySource.PSEUDO else 1.0 for e in pool], dtype=np.float64
        )
        eligible = np.flatnonzero(weights > 0)
        if eligible.size == 0:
            return []
        if n_tasks >= eligible.size:
            chosen = eligible
        else:
            chosen = np.sort(rng.choice(len(pool), size=n_tasks, replace=False, p=weights / weights.sum()))

        known = [c for c in self.novel if bundle.supports_of(c)]
        tasks = []
        for i in chosen:
            entry = pool[int(i)]
            category = entry.record.category
            categories = [category]
            others = [c for c in known if c != category]
            if self.config.contrast_tasks and others:
                categories.append(others[int(rng.integers(len(others)))])
            for target in categories:
                positives = tuple(a for a in entry.annotations if a.category == target)
                if target == category and not positives and self._unlabeled_pseudo(entry):
                    # 图中同类物体全部未标注
                    continue
                support = self.sample_supports(
                    bundle,
                    target,
                    k,
                    derive_seed(seed, SUPPORT_NAMESPACE, entry.record.image_id, target.id),
                    policy=self.config.task_support_sampling,
                    query=entry.record,
                )
                tasks.append(MetaTask(entry.record, support, positives, entry.source))
        return tasks

    # ---------- 伪标注、微调与评估 ----------

    def _map(self, fn: Callable, items: Sequence, desc: str) -> List:
        if self.workers <= 1 or len(items) <= 1:
            return [fn(item) for item in tqdm(items, desc=desc, disable=not self.show_progress)]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, disable=not self.show_progress))

    def infer_pseudo_labels(
        self, d_udo: Sequence[ImageRecord], params_prev: DetectorParams, bundle: DatabaseBundle, seed: int
    ) -> PseudoSet:
        """
        f_{θt−1}(D_UDO|S)：分数不低于 tau_pseudo 的检测成为伪标注，置信度取分数

        没有任何保留检测的 UDO 图像仍以空标注列表保留在 D_Pseudo 中。
        """

        def label(record: ImageRecord) -> Tuple[ImageRecord, Tuple[Annotation, ...]]:
            if not bundle.supports_of(record.category):
                raise EmptySupport(f"UDO 图像 {record.image_id} 的类别没有支持图像")
            if self.config.pseudo_cross_category:
                targets = [c for c in self.novel if bundle.supports_of(c)]
            else:
                targets = [record.category]
            annotations = []
            for target in targets:
                support = self.sample_supports(
                    bundle, target, self.config.k, derive_seed(seed, SUPPORT_NAMESPACE, record.image_id, target.id)
                )
                annotations.extend(
                    Annotation.pseudo(d)
                    for d in self.detector.detect_record(record, support, params_prev)
                    if d.score >= self.config.tau_pseudo
                )
            return record, tuple(annotations)

        return self._map(label, list(d_udo), "伪标注")

    def _fine_tune_set(self, bundle: DatabaseBundle, seed: int) -> List[MetaTask]:
        if self.config.mode == AblationMode.SUPERVISED:
            records = list(bundle.udo) + [record for record, _ in bundle.moa]
            pool = [JointEntry(r, bundle.truth_of(r.image_id), EntrySource.GROUND_TRUTH) for r in records]
        else:
            pool = build_joint_set(bundle.pseudo, bundle.moa, self.config.mode)
        return self.sample_task_set(pool, bundle, self.config.k, self.config.max_tasks, seed)

    def moa_polish(self, params: DetectorParams, bundle: DatabaseBundle, seed: int) -> DetectorParams:
        """只在 D_MOA 与 D_Support 上以学习率 eta 固定微调 L 步"""
        if self.config.L == 0:
            return params
        pool = build_joint_set([], bundle.moa, AblationMode.MOA_ONLY)
        tasks = self.sample_task_set(pool, bundle, self.config.k, self.config.max_tasks, seed)
        assert not any(a.is_pseudo for t in tasks for a in t.positives), "MOA 微调任务中出现伪标注"
        if not tasks:
            return params
        return self.detector.fine_tune(params, tasks, self.config.eta, FineTuneMode.FIXED_STEPS, steps=self.config.L)

    def evaluate(self, state: StageState, params: DetectorParams) -> Dict[str, EvalResult]:
        results = {}
        for name in ("sparse", "dense"):
            dataset = self.eval_sets.get(name, [])
            if not dataset:
                results[name] = EvalResult({}, None, None, 0, 0, ())
                continue

            def sampler(category: CategoryId, k: int) -> SupportSet:
                return self.sample_supports(
                    state.bundle, category, k, derive_seed(state.master_seed, EVAL_NAMESPACE, state.t, category.id)
                )

            result = evaluate_model(self.detector, params, sampler, dataset, self.config.k, state.categories, self.workers)
            for category_ap in result.per_category.values():
                assert category_ap.ap50 >= category_ap.ap - 1e-12, f"{category_ap.name}: AP50 < AP"
            results[name] = result
        return results

    # ---------- 阶段 ----------

    def run_stage(self, state: StageState) -> StageState:
        """
        执行一个完整阶段，返回新的状态；中途失败时传入的状态保持不变

        Raises:
            GraspExhausted: 某一轮在全部重启后仍抓取失败
            PlacementInfeasible: 某一轮在全部重启后仍无法放置
        """
        cfg = self.config
        if state.t >= cfg.T:
            raise ValueError(f"已达到最大阶段 T={cfg.T}")
        started = time.perf_counter()
        t = state.t + 1
        seed = state.master_seed
        bundle = _copy_bundle(state.bundle)
        active = cfg.active_categories(t, self.novel)
        categories = list(state.categories) + [c for c in active if c not in state.categories]
        logger.info(f"阶段 {t}/{cfg.T} 开始: 类别 {[c.name for c in active]}, 每类 {cfg.N} 轮")

        rounds = [(c, r) for c in active for r in range(cfg.N)]
        for category, index in tqdm(rounds, desc=f"阶段{t} GOR", disable=not self.show_progress):
            self._collect_round(bundle, t, category, index, seed)
        expected = cfg.expected_collections(t, self.novel)
        assert len(bundle.udo) == len(bundle.moa) == expected, (
            f"数据库增长异常: UDO={len(bundle.udo)}, MOA={len(bundle.moa)}, 期望 {expected}"
        )

        if cfg.mode == AblationMode.SUPERVISED:
            bundle.replace_pseudo([])
        else:
            bundle.replace_pseudo(
                self.infer_pseudo_labels(bundle.udo, state.params_current, bundle, derive_seed(seed, "pseudo", t))
            )

        stage = replace(state, t=t, bundle=bundle, categories=categories)
        start = state.params_current if cfg.warm_start else state.params_0
        tasks = self._fine_tune_set(bundle, derive_seed(seed, TASK_NAMESPACE, "joint", t))
        trace = FineTuneTrace()
        if tasks:
            params = self.detector.fine_tune(start, tasks, cfg.finetune_lr, FineTuneMode.UNTIL_CONVERGENCE, trace=trace)
        else:
            logger.warning(f"阶段 {t} 没有可用任务，跳过联合微调")
            params = start
        params = self.moa_polish(params, bundle, derive_seed(seed, TASK_NAMESPACE, "polish", t))

        results = self.evaluate(stage, params)
        quality = pseudo_quality(bundle.pseudo, bundle.truth_of) if bundle.pseudo else None
        report = MetricsReport(
            stage=t,
            mode=cfg.mode.value,
            sparse=results["sparse"],
            dense=results["dense"],
            pseudo_quality=quality,
            database_sizes=bundle.sizes(),
            categories=tuple(c.name for c in categories),
            config_hash=self.config_hash,
            wall_clock=time.perf_counter() - started,
        )
        logger.success(
            f"阶段 {t} 完成: 任务 {len(tasks)}, 微调步数 {trace.steps}, "
            f"AP(sparse)={report.sparse.overall_ap}, AP(dense)={report.dense.overall_ap}, 耗时 {report.wall_clock:.1f}s"
        )
        return replace(stage, params_current=params, history=list(state.history) + [report])

    def run(self, state: StageState, on_stage: Optional[Callable[[StageState], None]] = None) -> StageState:
        """从给定状态一直运行到第 T 阶段，每完成一个阶段回调一次（用于写检查点）"""
        while state.t < self.config.T:
            state = self.run_stage(state)
            if on_stage is not None:
                on_stage(state)
        return state
