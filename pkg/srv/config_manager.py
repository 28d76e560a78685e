"""
配置管理模块
管理引擎调优参数、模型物理常数和扫描默认值，支持用户覆盖文件
"""

import copy
import json
import logging
import os
from typing import Any, Dict, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    tomllib = None

from .errors import ConfigError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

SECTIONS = ("engine", "pcs", "highway", "phold", "sweep")


class ConfigManager:
    """配置管理器"""

    def __init__(self, config_file: str = "bench_config.json",
                 user_config_file: Optional[str] = "user_config.json"):
        """
        初始化配置管理器

        Args:
            config_file: 主配置文件路径 (.json 或 .toml)
            user_config_file: 用户覆盖文件路径，None 表示不使用
        """
        self.config_file = config_file
        self.config = self._load_config()
        self.user_config_file = user_config_file
        self.user_config = self._load_user_config()

    def _read(self, path: str) -> Dict:
        if path.endswith(".toml"):
            if tomllib is None:
                raise ConfigError(f"当前 Python 不支持读取 TOML: {path}")
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def _load_config(self) -> Dict:
        """加载主配置文件，缺失或损坏时使用默认配置"""
        defaults = self._get_default_config()
        try:
            if os.path.exists(self.config_file):
                return _merge(defaults, self._read(self.config_file))
            logger.info("配置文件 %s 不存在，使用默认配置", self.config_file)
        except (OSError, ValueError, ConfigError) as e:
            logger.warning("加载配置文件失败: %s，使用默认配置", e)
        return defaults

    def _load_user_config(self) -> Dict:
        """加载用户自定义配置"""
        if not self.user_config_file:
            return {}
        try:
            if os.path.exists(self.user_config_file):
                return self._read(self.user_config_file)
        except (OSError, ValueError, ConfigError) as e:
            logger.warning("加载用户配置失败: %s", e)
        return {}

    def _get_default_config(self) -> Dict:
        """获取默认配置"""
        return {
            "engine": {
                "checkpoint_interval": 16,
                "gvt_period": 4096,
                "bind_span": None,
                "band": None,
                "recent_objects": 8,
                "pin_threads": True,
            },
            "pcs": {
                "cells": 256,
                "channels": 512,
                "call_mean": 2.0,
                "move_mean": 5.0,
                "min_latency": 0.01,
                "p_min": 0.01,
                "p_max": 1.0,
                "noise": 10.0,
                "alpha": 3.5,
            },
            "highway": {
                "zones": 256,
                "layout": "closed",
                "entry_zones": [0],
                "exit_zones": [],
                "exit_prob": 0.1,
                "lanes": 3,
                "speed_limit": 130.0,
                "safe_gap_s": 2.0,
                "jitter_sigma": 0.05,
            },
            "phold": {
                "objects": 64,
                "frac_self": 0.5,
                "mean_delay": 1.0,
                "lookahead": 0.1,
            },
            "sweep": {
                "threads": [1, 2, 4],
                "samples": 20,
                "duration_s": 60.0,
                "warmup_fraction": 0.05,
                "seed": 42,
                "placement": "auto",
                "scale": None,
            },
        }

    def section(self, name: str) -> Dict[str, Any]:
        """
        获取合并后的配置段，用户配置优先

        Args:
            name: engine / pcs / highway / phold / sweep

        Returns:
            配置字典的副本
        """
        if name not in SECTIONS:
            raise ConfigError(f"未知配置段: {name}")
        merged = copy.deepcopy(self.config.get(name, {}))
        merged.update(self.user_config.get(name, {}))
        return merged

    def model_params(self, model: str) -> Dict[str, Any]:
        """模型物理常数，作为 WorkloadConfig.params"""
        return self.section(model)

    def engine_options(self, engine: str) -> Dict[str, Any]:
        """
        转换为引擎构造参数

        Args:
            engine: sequential / conservative / optimistic

        Returns:
            关键字参数字典
        """
        opts = self.section("engine")
        if engine == "optimistic":
            return {
                "checkpoint_interval": int(opts["checkpoint_interval"]),
                "gvt_period": int(opts["gvt_period"]),
                "bind_span": opts.get("bind_span"),
                "band": opts.get("band"),
                "recent": int(opts["recent_objects"]),
                "pin": bool(opts["pin_threads"]),
            }
        if engine == "conservative":
            return {"pin": bool(opts["pin_threads"])}
        return {}

    def set_preference(self, section: str, key: str, value: Any):
        """
        设置用户覆盖项并保存

        Args:
            section: 配置段
            key: 键
            value: 值
        """
        if section not in SECTIONS:
            raise ConfigError(f"未知配置段: {section}")
        self.user_config.setdefault(section, {})[key] = value
        self._save_user_config()

    def _save_user_config(self):
        """保存用户配置"""
        if not self.user_config_file:
            return
        if self.user_config_file.endswith(".toml"):
            raise ConfigError("用户覆盖文件只能保存为 JSON")
        try:
            with open(self.user_config_file, "w", encoding="utf-8") as f:
                json.dump(self.user_config, f, ensure_ascii=False, indent=2)
        except OSError as e:
            logger.warning("保存用户配置失败: %s", e)

    def show_config_summary(self):
        """显示配置摘要"""
        print("\n当前基准配置:")
        print("=" * 50)
        for name in SECTIONS:
            print(f"[{name}]")
            for key, value in self.section(name).items():
                print(f"  {key}: {value}")
            print()


def _merge(base: Dict, override: Dict) -> Dict:
    """两层合并: 配置段内逐键覆盖"""
    merged = copy.deepcopy(base)
    for name, values in override.items():
        if isinstance(values, dict) and isinstance(merged.get(name), dict):
            merged[name].update(values)
        else:
            merged[name] = values
    return merged


def main():
    """配置查看入口"""
    ConfigManager().show_config_summary()


if __name__ == "__main__":
    main()
