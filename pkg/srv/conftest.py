"""
测试共用的小规模拓扑与模型
"""

import functools

import pytest

from .engine_sequential import run_sequential
from .metrics import StopCondition
from .model_contract import WorkloadConfig, build_model
from .phold_model import PholdModel
from .topology import NumaNode, Topology


def two_node_topology() -> Topology:
    """两个节点，每个节点两个双线程核，共 8 个逻辑 CPU"""
    return Topology((NumaNode(0, ((0, 1), (2, 3))), NumaNode(1, ((4, 5), (6, 7)))), "test-2x4")


def small_phold(objects: int = 16, seed: int = 7, lookahead: float = 0.5,
                population: int = 2, frac_self: float = 0.25) -> PholdModel:
    return PholdModel(objects, seed, population=population, frac_self=frac_self,
                      mean_delay=1.0, lookahead=lookahead)


def small_pcs(load: str = "heavy", seed: int = 11, cells: int = 16, channels: int = 64):
    return build_model(WorkloadConfig("pcs", load, seed=seed,
                                      params={"cells": cells, "channels": channels}))


def small_highway(load: str = "light", balance: str = "balanced", seed: int = 5, zones: int = 16,
                  **params):
    params = dict(params, zones=zones)
    return build_model(WorkloadConfig("highway", load, balance, seed=seed, params=params))


@pytest.fixture
def topology() -> Topology:
    return two_node_topology()


# 桌面规模的一致性检查: 256 个小区 / 区段，种子 42，10^5 个事件
DESK_BUDGET = 10**5
DESK_LOADS = {"pcs": "heavy", "highway": "medium"}


def desk_model(name: str):
    return build_model(WorkloadConfig(name, DESK_LOADS[name], seed=42))


@functools.lru_cache(maxsize=None)
def desk_reference(name: str):
    """桌面规模模型的顺序参考 (指标, 指纹)，同一会话内只算一次"""
    return run_sequential(desk_model(name), StopCondition(events=DESK_BUDGET))
