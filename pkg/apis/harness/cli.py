#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : cli.py
@Time    : 2025/7/12 14:30
@Author  : zhouming
"""
import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

from apis.harness.checkpoint import CheckpointStore
from apis.harness.dataset_io import export_scenes
from apis.loop.bootstrap import bootstrap_pretrain
from apis.loop.loop_runner import AblationMode, LoopRunner, StageState, eval_images
from config.config_loader import ExperimentConfig, load_config, with_overrides, worker_count
from core.detector import FewShotDetector
from core.evaluator import EvalImage
from core.exceptions import CheckpointError, ConfigError, OdipError, SchemaError
from core.grasp_simulator import GraspSimulator
from core.scene_generator import SceneGenerator
from models.detector_model import DetectorParams
from models.metrics_model import MetricsReport
from models.scene_model import TableKind
from utility.log_utils.logger import NO_RUN, Logger
from utility.path_utils.path_get import get_config_path, resolve_output_dir
from utility.report_utils.table_writer import (
    ablation_table,
    monotonicity_summary,
    pseudo_series,
    render_text,
    sequential_matrix,
    sizes_table,
    stage_table,
    write_tables,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
KIND_CHOICES = {"sparse": TableKind.EVAL_SPARSE, "dense": TableKind.EVAL_DENSE}


@dataclass
class Context:
    """一次命令执行所需的全部组件"""

    config: ExperimentConfig
    generator: SceneGenerator
    simulator: GraspSimulator
    detector: FewShotDetector
    workers: int

    @classmethod
    def build(cls, config: ExperimentConfig) -> "Context":
        generator = SceneGenerator(config.registry, config.scene)
        return cls(config, generator, GraspSimulator(generator), FewShotDetector(config.detector), worker_count())

    def eval_sets(self, show_progress: bool = False) -> Dict[str, List[EvalImage]]:
        registry = self.config.registry
        sets = {}
        for name, kind, count in (
            ("sparse", TableKind.EVAL_SPARSE, self.config.sparse_images),
            ("dense", TableKind.EVAL_DENSE, self.config.dense_images),
        ):
            scenes = self.generator.make_eval_dataset(
                kind, count, registry.novel(), registry.base(), self.config.seed, show_progress
            )
            sets[name] = eval_images(kind, scenes)
        return sets


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"必须为正整数: {value}")
    return number


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    return Path(args.out) if getattr(args, "out", None) else resolve_output_dir(config.output_dir)


def _setup_logging(level: str, out_dir: Optional[Path], run_tag: str = NO_RUN) -> Logger:
    log = Logger(level=level, run_tag=run_tag)
    if out_dir is not None:
        log.add_file_sink(out_dir / "logs" / "odip.log")
    return log


# ---------- 运行 ----------


def ensure_params_0(ctx: Context, store: CheckpointStore, show_progress: bool) -> DetectorParams:
    params_0 = store.load_params_0()
    if params_0 is None:
        params_0 = bootstrap_pretrain(ctx.detector, ctx.generator, ctx.config.bootstrap, ctx.config.seed, show_progress)
        store.save_params_0(params_0)
    return params_0


def execute_run(
    ctx: Context,
    out_dir: Path,
    resume: bool = False,
    show_progress: bool = False,
    params_0: Optional[DetectorParams] = None,
    eval_sets: Optional[Dict[str, List[EvalImage]]] = None,
) -> StageState:
    """
    驱动 looprunner 完成全部 T 个阶段，每个阶段结束写检查点

    Raises:
        CheckpointError: 目录已有检查点但未指定 --resume，或检查点不一致
    """
    config = ctx.config
    store = CheckpointStore(out_dir, config.registry)
    store.write_manifest(
        config.config_hash, config.raw, {"mode": config.run.mode.value, "seed": config.seed, "T": config.run.T}
    )
    if params_0 is None:
        params_0 = ensure_params_0(ctx, store, show_progress)
    else:
        store.save_params_0(params_0)
    runner = LoopRunner(
        ctx.simulator,
        ctx.detector,
        config.grasp,
        config.run,
        eval_sets if eval_sets is not None else ctx.eval_sets(show_progress),
        config.config_hash,
        ctx.workers,
        show_progress,
    )
    completed = store.completed_stages()
    if completed and not resume:
        raise CheckpointError(f"{out_dir} 已有 {len(completed)} 个阶段检查点，请使用 --resume 继续")
    state = store.load_state(params_0) if completed else runner.initial_state(params_0, config.seed)
    try:
        state = runner.run(state, on_stage=store.save_stage)
    except OdipError as e:
        logger.error(f"阶段 {state.t + 1} 中止，最近的完整检查点为阶段 {state.t}: {e}")
        raise
    return state


def emit_report(run_dir: Path, xlsx: bool = False, echo: bool = True) -> Dict[str, pd.DataFrame]:
    """
    汇总运行目录中的阶段报告

    Raises:
        CheckpointError: 缺少清单、没有阶段报告或报告的配置哈希不一致
    """
    manifest_path = run_dir / "run_manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"{run_dir} 中没有 run_manifest.json")
    store = CheckpointStore(run_dir, registry=None)
    manifest = store.read_manifest()
    reports = store.load_reports()
    if not reports:
        raise CheckpointError(f"{run_dir} 中没有阶段报告")
    hashes = {r.config_hash for r in reports}
    if hashes != {manifest["config_hash"]}:
        raise CheckpointError(f"阶段报告的配置哈希不一致: {sorted(h[:12] for h in hashes)}")

    series = pseudo_series(reports)
    tables = {
        "stages_sparse": stage_table(reports, "sparse"),
        "stages_dense": stage_table(reports, "dense"),
        "sequential_sparse": sequential_matrix(reports, "sparse"),
        "sequential_dense": sequential_matrix(reports, "dense"),
        "pseudo_quality": series,
        "database_sizes": sizes_table(reports),
    }
    write_tables(tables, run_dir / "report", xlsx, index_tables=("sequential_sparse", "sequential_dense"))
    summary = monotonicity_summary(series)
    (run_dir / "report" / "pseudo_quality_summary.txt").write_text(summary + "\n", encoding="utf-8")
    if echo:
        for name in ("stages_sparse", "stages_dense", "pseudo_quality", "database_sizes"):
            print(f"\n[{name}]")
            print(render_text(tables[name]))
        print(f"\n{summary}")
    return tables


# ---------- 子命令 ----------


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    _setup_logging(config.log_level, out_dir, config.config_hash[:12])
    ctx = Context.build(config)
    kind = KIND_CHOICES[args.kind]
    registry = config.registry
    scenes = ctx.generator.make_eval_dataset(kind, args.images, registry.novel(), registry.base(), args.seed, args.progress)
    export_scenes(
        scenes,
        out_dir,
        kind.value,
        {
            "kind": kind.value,
            "seed": args.seed,
            "config_hash": config.config_hash,
            "categories": {str(c.id): c.name for c in registry.all()},
        },
    )
    logger.success(f"评估集已生成: {args.images} 张 {kind.value} 图像")
    return EXIT_OK


def cmd_bootstrap(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out_dir = _out_dir(args, config)
    _setup_logging(config.log_level, out_dir, config.config_hash[:12])
    ctx = Context.build(config)
    store = CheckpointStore(out_dir, config.registry)
    store.write_manifest(config.config_hash, config.raw, {"mode": config.run.mode.value, "seed": config.seed})
    ensure_params_0(ctx, store, args.progress)
    logger.success(f"f_θ0 已写入 {out_dir / 'params_0.json'}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out_dir = _out_dir(args, config)
    _setup_logging(config.log_level, out_dir, config.config_hash[:12])
    execute_run(Context.build(config), out_dir, args.resume, args.progress)
    emit_report(out_dir, config.write_xlsx)
    logger.success(f"运行完成: {out_dir}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    base = load_config(args.config)
    out_dir = _out_dir(args, base)
    log = _setup_logging(base.log_level, out_dir, base.config_hash[:12])
    base_ctx = Context.build(base)
    eval_sets = base_ctx.eval_sets(args.progress)
    boot_store = CheckpointStore(out_dir / "bootstrap", base.registry)
    boot_store.write_manifest(base.config_hash, base.raw)
    params_0 = ensure_params_0(base_ctx, boot_store, args.progress)

    runs: Dict[str, List[MetricsReport]] = {}
    for mode in args.modes:
        config = with_overrides(base, run={"mode": mode})
        log.set_run_tag(f"{mode}:{config.config_hash[:8]}")
        ctx = Context.build(config)
        ctx.detector = base_ctx.detector
        state = execute_run(ctx, out_dir / mode, args.resume, args.progress, params_0, eval_sets)
        runs[mode] = state.history
        emit_report(out_dir / mode, config.write_xlsx, echo=False)

    stages = args.stages or None
    tables = {f"ablation_{name}": ablation_table(runs, name, stages) for name in ("sparse", "dense")}
    write_tables(tables, out_dir / "ablation", base.write_xlsx)
    for name, frame in tables.items():
        print(f"\n[{name}]")
        print(render_text(frame))
    logger.success(f"消融完成: {', '.join(args.modes)}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    Logger(level="INFO")
    emit_report(run_dir, args.xlsx)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odip", description="ODIP 在线少样本检测自适应模拟")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_out: bool = True) -> None:
        p.add_argument("--config", type=Path, default=get_config_path(), help="YAML 实验配置")
        if with_out:
            p.add_argument("--out", type=Path, default=None, help="输出目录，默认取配置中的 output.dir")
        p.add_argument("--progress", action="store_true", help="显示进度条")

    gen = sub.add_parser("gen-dataset", help="生成留出评估集（PNG + JSON 标注 + 清单）")
    common(gen, with_out=False)
    gen.add_argument("--kind", choices=sorted(KIND_CHOICES), required=True)
    gen.add_argument("--images", type=_positive_int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen_dataset)

    run = sub.add_parser("run", help="执行全部 T 个阶段")
    common(run)
    run.add_argument("--resume", action="store_true", help="从最近的完整阶段继续")
    run.set_defaults(handler=cmd_run)

    ablate = sub.add_parser("ablate", help="比较 D_All 的不同组成方式")
    common(ablate)
    ablate.add_argument(
        "--modes",
        nargs="+",
        choices=[m.value for m in AblationMode],
        default=[AblationMode.JOINT.value, AblationMode.MOA_ONLY.value, AblationMode.UDO_ONLY.value],
    )
    ablate.add_argument("--stages", type=_positive_int, nargs="*", default=None, help="对比表列出的阶段")
    ablate.add_argument("--resume", action="store_true")
    ablate.set_defaults(handler=cmd_ablate)

    report = sub.add_parser("report", help="汇总运行目录中的阶段报告")
    report.add_argument("--run-dir", type=Path, required=True)
    report.add_argument("--xlsx", action="store_true", help="同时写出 report.xlsx")
    report.set_defaults(handler=cmd_report)

    boot = sub.add_parser("bootstrap-pretrain", help="只用基础类训练 f_θ0")
    common(boot)
    boot.set_defaults(handler=cmd_bootstrap)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行入口，返回退出码：0 成功，2 配置错误，3 运行失败"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, SchemaError) as e:
        logger.error(f"配置错误: {e}")
        return EXIT_CONFIG
    except (OdipError, OSError) as e:
        logger.error(f"运行失败: {e}")
        return EXIT_RUNTIME
    finally:
        logger.complete()


if __name__ == "__main__":
    sys.exit(main())
