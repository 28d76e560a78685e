"""
顺序参考引擎
单线程按全局键序处理事件，给出两个并行引擎都必须复现的提交序列和最终状态
"""

import heapq
import logging
import time
from typing import Any, Dict, List, Optional, Tuple

from .core import (EventKey, EventRecord, EventStatus, Fingerprint, RngStream,
                   chain_key, model_fingerprint, virtual_time)
from .errors import CausalityViolationError, InvalidParameterError
from .metrics import RunMetrics, StopCondition, WallClock
from .model_contract import Emit, Model

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

CLOCK_CHECK_EVERY = 256


class SequentialEngine:
    """
    顺序引擎

    Args:
        model: 仿真模型
        stop: 停止条件
        record_trace: 是否记录每个对象的提交键序列
    """

    def __init__(self, model: Model, stop: StopCondition, record_trace: bool = False):
        self.model = model
        self.stop = stop
        self.record_trace = record_trace
        n = model.n_objects
        self.states: List[Any] = [None] * n
        self.rngs = [RngStream(model.seed, i) for i in range(n)]
        self.digests = [0] * n
        self.traces: Dict[int, List[EventKey]] = {i: [] for i in range(n)} if record_trace else {}
        self.clock = 0.0
        self.metrics = RunMetrics()
        self._seq = [0] * n
        self._heap: List[Tuple[EventKey, EventRecord]] = []

    def _emitter(self, src: int, current: Optional[EventKey]) -> Emit:
        n = self.model.n_objects

        def emit(ts: float, dst: int, kind: str, payload: Any = None):
            if not 0 <= dst < n:
                raise InvalidParameterError(f"目的对象越界: {dst}")
            key = EventKey(virtual_time(ts), dst, src, self._seq[src])
            self._seq[src] += 1
            if current is not None and not key > current:
                raise CausalityViolationError(
                    f"对象 {src} 在处理 {current} 时调度了更早的事件 {key}")
            heapq.heappush(self._heap, (key, EventRecord(key, kind, payload)))

        return emit

    def initialize(self):
        for obj in range(self.model.n_objects):
            self.states[obj] = self.model.init(obj, self.rngs[obj], self._emitter(obj, None))

    def run(self) -> Tuple[RunMetrics, Fingerprint]:
        """运行到停止条件，返回指标与合并指纹"""
        logger.info("顺序引擎开始: %s", self.model.describe())
        self.initialize()
        clock = WallClock(self.stop)
        budget = self.stop.event_budget
        horizon = self.stop.horizon
        warmed = clock.warmup_at == float("inf")
        committed = 0
        while self._heap and committed < budget:
            key, record = self._heap[0]
            if key.ts >= horizon:
                break
            if committed % CLOCK_CHECK_EVERY == 0:
                now = time.perf_counter()
                if now >= clock.deadline:
                    break
                if not warmed and now >= clock.warmup_at:
                    self.metrics.mark_warmup(committed, now - clock.start)
                    warmed = True
            heapq.heappop(self._heap)
            record.transition(EventStatus.PENDING, EventStatus.IN_PROCESSING)
            dst = key.dst
            self.states[dst] = self.model.on_event(
                self.states[dst], record, self.rngs[dst], self._emitter(dst, key))
            record.transition(EventStatus.IN_PROCESSING, EventStatus.PROCESSED)
            self.digests[dst] = chain_key(self.digests[dst], key)
            if self.record_trace:
                self.traces[dst].append(key)
            self.clock = key.ts
            committed += 1
        self.metrics.committed_events = committed
        self.metrics.processed_events = committed
        self.metrics.wall_seconds = clock.elapsed()
        fingerprint = model_fingerprint(self.model, self.states, self.digests)
        logger.info("顺序引擎结束: 提交 %d 个事件，用时 %.3f 秒，指纹 %s",
                    committed, self.metrics.wall_seconds, fingerprint.hex())
        return self.metrics, fingerprint

    def pending(self) -> List[EventRecord]:
        """尚未处理的事件，按键序"""
        return [rec for _, rec in sorted(self._heap)]


def run_sequential(model: Model, stop: StopCondition,
                   record_trace: bool = False) -> Tuple[RunMetrics, Fingerprint]:
    """
    顺序运行模型

    Args:
        model: 仿真模型
        stop: 停止条件
        record_trace: 是否记录提交键序列

    Returns:
        (运行指标, 合并指纹)
    """
    return SequentialEngine(model, stop, record_trace).run()
