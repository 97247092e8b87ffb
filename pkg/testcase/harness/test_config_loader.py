#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
@File    : test_config_loader.py
@Time    : 2025/7/16 10:00
@Author  : zhouming
"""
from pathlib import Path

import pytest

from apis.loop.loop_runner import AblationMode, SupportSampling
from config.config_loader import build_config, config_hash, load_config, validate_config, with_overrides, worker_count
from core.exceptions import ConfigError
from utility.path_utils.path_get import get_config_path
from testcase.base_testcase import BaseTestCase


class TestValidation(BaseTestCase):
    """schema 校验与默认值"""

    @pytest.mark.parametrize("key", ["T", "N", "L", "eta", "k"])
    def test_missing_required_run_key(self, minimal_config, key):
        del minimal_config["run"][key]
        with pytest.raises(ConfigError):
            build_config(minimal_config)

    def test_missing_categories(self, minimal_config):
        del minimal_config["categories"]
        with pytest.raises(ConfigError):
            build_config(minimal_config)

    @pytest.mark.parametrize("section", ["run", "scene", "detector", "grasp"])
    def test_unknown_key_rejected(self, minimal_config, section):
        minimal_config.setdefault(section, {})["typo_key"] = 1
        with pytest.raises(ConfigError):
            build_config(minimal_config)

    @pytest.mark.parametrize(
        "section, key, value",
        [
            ("run", "T", 0),
            ("run", "eta", 0),
            ("run", "tau_pseudo", 1.2),
            ("run", "mode", "semi"),
            ("grasp", "success_probability", 1.5),
            ("detector", "shot_reduce", "median"),
            ("detector", "anchor_weight", -0.1),
            ("detector", "max_prototypes", 0),
            ("run", "support_sampling", "round"),
            ("run", "task_support_sampling", "latest"),
        ],
    )
    def test_out_of_range_rejected(self, minimal_config, section, key, value):
        minimal_config.setdefault(section, {})[key] = value
        with pytest.raises(ConfigError):
            build_config(minimal_config)

    def test_defaults_filled(self, minimal_config):
        filled = validate_config(minimal_config)
        assert filled["run"]["tau_pseudo"] == 0.6
        assert filled["run"]["mode"] == "joint"
        assert filled["run"]["schedule"] == []
        assert filled["output"]["log_level"] == "WARNING"
        assert "tau_pseudo" not in minimal_config["run"]

    def test_built_objects(self, minimal_config):
        config = build_config(minimal_config)
        assert config.run.T == 1 and config.run.k == 2
        assert config.run.mode == AblationMode.JOINT
        assert config.run.n_novel == (3, 4)
        assert [c.name for c in config.registry.novel()] == ["cube"]
        assert [c.name for c in config.registry.base()] == ["wedge", "tape"]
        assert config.grasp.success_probability == 0.85 and config.grasp.max_retries == 3
        assert config.bootstrap.n_scenes == 4
        assert config.sparse_images == 2 and config.write_xlsx is False

    def test_task_and_detector_defaults(self, minimal_config):
        config = build_config(minimal_config)
        assert config.run.task_support_sampling == SupportSampling.ROUND
        assert config.run.support_sampling == SupportSampling.RECENT
        assert config.run.skip_unlabeled_pseudo is True
        assert config.detector.anchor_weight == 0.05
        assert config.detector.prototype_scoring is True and config.detector.max_prototypes == 96

    def test_desk_detector_section(self):
        config = load_config(get_config_path("desk_config.yaml"))
        assert config.detector.anchor_weight == 0.05
        assert config.detector.convergence_patience == 8
        assert config.run.max_tasks == 512

    def test_schedule_names_resolved(self, minimal_config):
        minimal_config["categories"]["novel"].append({"id": 1, "name": "can", "archetype": "disc", "hue": 0.33})
        minimal_config["run"]["T"] = 3
        minimal_config["run"]["schedule"] = [{"stage": 1, "categories": ["cube"]}, {"stage": 3, "categories": ["can"]}]
        assert build_config(minimal_config).run.schedule == ((1, (0,)), (3, (1,)))

    def test_unknown_schedule_category(self, minimal_config):
        minimal_config["run"]["schedule"] = [{"stage": 1, "categories": ["sphere"]}]
        with pytest.raises(ConfigError):
            build_config(minimal_config)

    def test_duplicate_category_names(self, minimal_config):
        minimal_config["categories"]["base"][1]["name"] = "wedge"
        with pytest.raises(ConfigError):
            build_config(minimal_config)

    def test_scale_bounds_inverted(self, minimal_config):
        minimal_config["scene"] = {"min_scale": 40, "max_scale": 20}
        with pytest.raises(ConfigError):
            build_config(minimal_config)


class TestConfigHash(BaseTestCase):
    """配置哈希"""

    def test_key_order_irrelevant(self):
        assert config_hash({"a": 1, "b": {"c": 2, "d": 3}}) == config_hash({"b": {"d": 3, "c": 2}, "a": 1})

    def test_stable_across_loads(self, minimal_config, write_config):
        path = write_config(minimal_config)
        assert load_config(path).config_hash == load_config(path).config_hash

    def test_explicit_default_same_hash(self, minimal_config):
        explicit = dict(minimal_config, seed=5)
        explicit["run"] = dict(minimal_config["run"], tau_pseudo=0.6)
        assert build_config(explicit).config_hash == build_config(minimal_config).config_hash

    def test_override_changes_hash(self, minimal_config):
        config = build_config(minimal_config)
        ablated = with_overrides(config, run={"mode": "moa-only"})
        assert ablated.run.mode == AblationMode.MOA_ONLY
        assert ablated.config_hash != config.config_hash
        assert config.run.mode == AblationMode.JOINT


class TestLoadConfig(BaseTestCase):
    """从文件读取配置"""

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("run: [T: 1\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_overrides_applied(self, minimal_config, write_config):
        config = load_config(write_config(minimal_config), overrides={"run": {"L": 0}, "seed": 9})
        assert config.run.L == 0
        assert config.seed == 9

    @pytest.mark.parametrize("name", ["experiment_config.yaml", "desk_config.yaml"])
    def test_bundled_configs_load(self, name):
        config = load_config(get_config_path(name))
        assert config.path == Path(get_config_path(name))
        assert config.registry.novel() and config.registry.base()
        assert config.run.T >= 1


class TestWorkerCount(BaseTestCase):
    """只读推理线程数"""

    def test_from_environment(self, monkeypatch):
        monkeypatch.setenv("ODIP_THREADS", "2")
        assert worker_count() == 2

    def test_clamped_to_one(self, monkeypatch):
        monkeypatch.setenv("ODIP_THREADS", "0")
        assert worker_count() == 1

    def test_invalid_value(self, monkeypatch):
        monkeypatch.setenv("ODIP_THREADS", "many")
        with pytest.raises(ConfigError):
            worker_count()
