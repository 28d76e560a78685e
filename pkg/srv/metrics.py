"""
运行指标与停止条件
"""

import math
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

from .errors import InvalidParameterError


@dataclass
class StopCondition:
    """
    运行停止条件，可组合，先到者生效

    Args:
        events: 提交事件预算 (确定性验证用)
        wall_seconds: 墙钟预算 (基准测试用)
        end_time: 虚拟时间上界 (不含)
        warmup_fraction: 墙钟模式下不计入吞吐量的前置比例
    """
    events: Optional[int] = None
    wall_seconds: Optional[float] = None
    end_time: Optional[float] = None
    warmup_fraction: float = 0.05

    def __post_init__(self):
        if self.events is None and self.wall_seconds is None and self.end_time is None:
            raise InvalidParameterError("至少需要一个停止预算")
        if self.events is not None and self.events <= 0:
            raise InvalidParameterError(f"事件预算必须为正: {self.events}")
        if self.wall_seconds is not None and self.wall_seconds <= 0:
            raise InvalidParameterError(f"墙钟预算必须为正: {self.wall_seconds}")
        if self.end_time is not None and not self.end_time > 0:
            raise InvalidParameterError(f"虚拟时间上界必须为正: {self.end_time}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise InvalidParameterError(f"预热比例必须在 [0, 1): {self.warmup_fraction}")

    @property
    def event_budget(self) -> float:
        return math.inf if self.events is None else self.events

    @property
    def horizon(self) -> float:
        return math.inf if self.end_time is None else self.end_time


class WallClock:
    """墙钟计时器，负责截止判断与预热快照时刻"""

    def __init__(self, stop: StopCondition):
        self.stop = stop
        self.start = time.perf_counter()
        if stop.wall_seconds is not None:
            self.deadline = self.start + stop.wall_seconds
            self.warmup_at = self.start + stop.wall_seconds * stop.warmup_fraction
        else:
            self.deadline = math.inf
            self.warmup_at = math.inf

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


@dataclass
class RunMetrics:
    """单次运行的指标"""
    committed_events: int = 0
    processed_events: int = 0
    rollbacks: int = 0
    wall_seconds: float = 0.0
    undone_events: int = 0
    # 预热基线: 提交基线只含预热前处理过的事件，不超过处理基线
    warmup_committed: int = 0
    warmup_processed: int = 0
    warmup_seconds: float = 0.0
    extras: Dict[str, float] = field(default_factory=dict)

    def mark_warmup(self, committed: int, elapsed: float, processed: Optional[int] = None):
        """
        记录预热结束时的基线

        Args:
            committed: 已提交事件数
            elapsed: 预热结束时刻 (相对运行开始，秒)
            processed: 已处理事件数，没有回滚的引擎与 committed 相同
        """
        self.warmup_committed = committed
        self.warmup_processed = committed if processed is None else processed
        self.warmup_seconds = elapsed

    @property
    def measured_seconds(self) -> float:
        return self.wall_seconds - self.warmup_seconds

    @property
    def committed_throughput(self) -> float:
        span = self.measured_seconds
        if span <= 0:
            return 0.0
        return (self.committed_events - self.warmup_committed) / span

    @property
    def total_throughput(self) -> float:
        span = self.measured_seconds
        if span <= 0:
            return 0.0
        return (self.processed_events - self.warmup_processed) / span

    def check(self):
        """检查指标自身的不变式"""
        assert self.committed_events <= self.processed_events, \
            f"提交事件数 {self.committed_events} 超过处理事件数 {self.processed_events}"
        measured_committed = self.committed_events - self.warmup_committed
        measured_processed = self.processed_events - self.warmup_processed
        assert measured_committed <= measured_processed, \
            f"测量区间提交数 {measured_committed} 超过处理数 {measured_processed}"
