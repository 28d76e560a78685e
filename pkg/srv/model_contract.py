"""
模型契约模块
引擎与仿真模型之间的边界，以及工作负载配置
"""

import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

from .core import EventRecord, ObjectId, RngStream
from .errors import ConfigError

# emit(ts, dst, kind, payload)，由引擎提供，负责分配事件键
Emit = Callable[[float, ObjectId, str, Any], None]

MODELS = ("pcs", "highway", "phold")
LOADS = ("light", "medium", "heavy")
BALANCES = ("balanced", "unbalanced")


class Model(ABC):
    """
    仿真模型基类
    每个对象的状态只由自身事件读写；on_event 在给定 (状态, 事件, 随机流位置) 下是确定的
    """

    name = "model"

    def __init__(self, n_objects: int, lookahead: float, seed: int):
        self.n_objects = n_objects
        self.lookahead = lookahead
        self.seed = seed

    @abstractmethod
    def init(self, obj: ObjectId, rng: RngStream, emit: Emit) -> Any:
        """
        构造对象的初始状态并调度初始事件

        Args:
            obj: 对象编号
            rng: 该对象的随机流
            emit: 事件发送函数

        Returns:
            初始状态
        """

    @abstractmethod
    def on_event(self, state: Any, event: EventRecord, rng: RngStream, emit: Emit) -> Any:
        """处理一个事件，返回更新后的状态"""

    @abstractmethod
    def state_bytes(self, state: Any) -> bytes:
        """状态的规范字节表示，用于指纹"""

    def copy_state(self, state: Any) -> Any:
        """检查点用的完整状态拷贝"""
        return copy.deepcopy(state)

    def describe(self) -> str:
        return f"{self.name}(objects={self.n_objects}, L={self.lookahead:g})"


@dataclass
class WorkloadConfig:
    """
    工作负载配置

    Args:
        model: pcs / highway / phold
        load: light / medium / heavy
        balance: balanced / unbalanced (仅 highway 支持 unbalanced)
        scale: 规模因子 (0, 1]；None 表示桌面默认规模
        seed: 全局随机种子
        params: 模型物理常数覆盖 (来自配置文件)
    """
    model: str = "pcs"
    load: str = "light"
    balance: str = "balanced"
    scale: Optional[float] = None
    seed: int = 42
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"未知模型: {self.model}")
        if self.load not in LOADS:
            raise ConfigError(f"未知负载: {self.load}")
        if self.balance not in BALANCES:
            raise ConfigError(f"未知均衡方式: {self.balance}")
        if self.balance == "unbalanced" and self.model != "highway":
            raise ConfigError("unbalanced 只适用于 highway 模型")
        if self.scale is not None and not 0.0 < self.scale <= 1.0:
            raise ConfigError(f"规模因子必须在 (0, 1]: {self.scale}")


def build_model(config: WorkloadConfig) -> Model:
    """按配置构造模型实例"""
    if config.model == "pcs":
        from .pcs_model import pcs_build
        return pcs_build(config)
    if config.model == "highway":
        from .highway_model import highway_build
        return highway_build(config)
    from .phold_model import phold_build
    return phold_build(config)
