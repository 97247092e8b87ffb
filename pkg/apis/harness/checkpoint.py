#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : checkpoint.py
@Time    : 2025/7/11 16:00
@Author  : zhouming
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from loguru import logger

from apis.harness.dataset_io import read_png, write_png
from apis.loop.loop_runner import StageState
from core.exceptions import CheckpointError
from core.geometry import Annotation, BBox
from models.database_model import DatabaseBundle, ImageRecord, ImageRole
from models.detector_model import DetectorParams
from models.metrics_model import MetricsReport
from models.scene_model import CategoryRegistry

MANIFEST_NAME = "run_manifest.json"
TIMING_NAME = "timing.json"


def _dump(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    tmp.replace(path)


def _load(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise CheckpointError(f"检查点文件缺失: {path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"检查点文件损坏: {path}: {e}") from e


class CheckpointStore:
    """
    运行目录

    images/ 下每张采集图像只写一次；stage_XX/ 保存该阶段结束时的参数、数据库、指标和状态，
    state.json 最后写入，作为阶段完整的标志。
    """

    def __init__(self, run_dir: Union[str, Path], registry: Optional[CategoryRegistry]):
        self.run_dir = Path(run_dir)
        self.registry = registry

    def stage_dir(self, stage: int) -> Path:
        return self.run_dir / f"stage_{stage:02d}"

    # ---------- 清单 ----------

    def write_manifest(self, config_hash: str, raw_config: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> None:
        path = self.run_dir / MANIFEST_NAME
        if path.exists():
            existing = self.read_manifest()
            if existing["config_hash"] != config_hash:
                raise CheckpointError(
                    f"运行目录 {self.run_dir} 属于另一份配置: {existing['config_hash'][:12]} != {config_hash[:12]}"
                )
            return
        _dump(path, dict(extra or {}, config_hash=config_hash, config=raw_config))

    def read_manifest(self) -> Dict[str, Any]:
        path = self.run_dir / MANIFEST_NAME
        if not path.exists():
            raise CheckpointError(f"{self.run_dir} 中没有 {MANIFEST_NAME}")
        return _load(path)

    # ---------- 参数 ----------

    def save_params_0(self, params: DetectorParams) -> None:
        _dump(self.run_dir / "params_0.json", params.to_dict())

    def load_params_0(self) -> Optional[DetectorParams]:
        path = self.run_dir / "params_0.json"
        return DetectorParams.from_dict(_load(path)) if path.exists() else None

    # ---------- 序列化 ----------

    def _image(self, record: ImageRecord) -> Dict[str, Any]:
        path = self.run_dir / "images" / f"{record.image_id}.png"
        if not path.exists():
            write_png(path, record.raster)
        return {
            "image_id": record.image_id,
            "role": record.role.value,
            "category_id": record.category.id,
            "stage": record.stage,
            "round_index": record.round_index,
            "view_index": record.view_index,
        }

    def _record(self, data: Dict[str, Any]) -> ImageRecord:
        raster = read_png(self.run_dir / "images" / f"{data['image_id']}.png")
        return ImageRecord(
            data["image_id"],
            raster,
            ImageRole(data["role"]),
            self.registry.get(data["category_id"]),
            data["stage"],
            data["round_index"],
            data["view_index"],
        )

    @staticmethod
    def _annotation(ann: Annotation) -> Dict[str, Any]:
        return {
            "category_id": ann.category.id,
            "box": ann.box.to_list(),
            "is_pseudo": ann.is_pseudo,
            "confidence": ann.confidence,
        }

    def _parse_annotation(self, data: Dict[str, Any]) -> Annotation:
        return Annotation(
            BBox.from_list(data["box"]), self.registry.get(data["category_id"]), data["is_pseudo"], data["confidence"]
        )

    def _annotations(self, items: Sequence[Dict[str, Any]]) -> Tuple[Annotation, ...]:
        return tuple(self._parse_annotation(a) for a in items)

    def _bundle_to_dict(self, bundle: DatabaseBundle) -> Dict[str, Any]:
        truth = bundle.hidden_truth
        return {
            "udo": [dict(self._image(r), truth=[self._annotation(a) for a in truth[r.image_id]]) for r in bundle.udo],
            "moa": [
                dict(self._image(r), label=self._annotation(label), truth=[self._annotation(a) for a in truth[r.image_id]])
                for r, label in bundle.moa
            ],
            "support": [self._image(r) for category_id in sorted(bundle.support) for r in bundle.support[category_id]],
            "pseudo": [
                {"image_id": r.image_id, "annotations": [self._annotation(a) for a in anns]} for r, anns in bundle.pseudo
            ],
        }

    def _bundle_from_dict(self, data: Dict[str, Any]) -> DatabaseBundle:
        bundle = DatabaseBundle()
        for item in data["udo"]:
            bundle.add_udo(self._record(item), self._annotations(item["truth"]))
        for item in data["moa"]:
            bundle.add_moa(self._record(item), self._parse_annotation(item["label"]), self._annotations(item["truth"]))
        for item in data["support"]:
            bundle.add_support(self._record(item))
        by_id = {r.image_id: r for r in bundle.udo}
        bundle.replace_pseudo([(by_id[p["image_id"]], self._annotations(p["annotations"])) for p in data["pseudo"]])
        return bundle

    # ---------- 阶段 ----------

    def save_stage(self, state: StageState) -> Path:
        """写出第 state.t 阶段的完整检查点"""
        stage_dir = self.stage_dir(state.t)
        report = state.history[-1]
        _dump(stage_dir / "params.json", state.params_current.to_dict())
        _dump(stage_dir / "database.json", self._bundle_to_dict(state.bundle))
        _dump(stage_dir / "metrics.json", report.to_dict())
        timing_path = self.run_dir / TIMING_NAME
        timing = _load(timing_path) if timing_path.exists() else {}
        timing[f"stage_{state.t:02d}"] = round(report.wall_clock, 3)
        _dump(timing_path, timing)
        _dump(
            stage_dir / "state.json",
            {"t": state.t, "categories": [c.id for c in state.categories], "master_seed": state.master_seed},
        )
        logger.debug(f"已写入阶段 {state.t} 检查点: {stage_dir}")
        return stage_dir

    def completed_stages(self) -> List[int]:
        stages = []
        for path in sorted(self.run_dir.glob("stage_*/state.json")):
            try:
                stages.append(int(path.parent.name.split("_")[1]))
            except (IndexError, ValueError):
                continue
        return sorted(stages)

    def load_reports(self, until: Optional[int] = None) -> List[MetricsReport]:
        timing_path = self.run_dir / TIMING_NAME
        timing = _load(timing_path) if timing_path.exists() else {}
        reports = []
        for stage in self.completed_stages():
            if until is not None and stage > until:
                break
            data = _load(self.stage_dir(stage) / "metrics.json")
            reports.append(MetricsReport.from_dict(data, timing.get(f"stage_{stage:02d}", 0.0)))
        return reports

    def load_state(self, params_0: DetectorParams, stage: Optional[int] = None) -> StageState:
        """
        从检查点恢复循环状态

        Raises:
            CheckpointError: 没有完整阶段或阶段不连续
        """
        stages = self.completed_stages()
        if not stages:
            raise CheckpointError(f"{self.run_dir} 中没有完整的阶段检查点")
        stage = stage if stage is not None else stages[-1]
        if stages[:stage] != list(range(1, stage + 1)):
            raise CheckpointError(f"阶段检查点不连续: {stages}")
        stage_dir = self.stage_dir(stage)
        meta = _load(stage_dir / "state.json")
        state = StageState(
            t=meta["t"],
            bundle=self._bundle_from_dict(_load(stage_dir / "database.json")),
            params_0=params_0,
            params_current=DetectorParams.from_dict(_load(stage_dir / "params.json")),
            categories=[self.registry.get(i) for i in meta["categories"]],
            history=self.load_reports(until=stage),
            master_seed=meta["master_seed"],
        )
        logger.info(f"已从阶段 {stage} 恢复: UDO {len(state.bundle.udo)}, MOA {len(state.bundle.moa)}")
        return state
