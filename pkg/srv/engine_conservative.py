"""
保守同步引擎
常量全局前瞻 L 划分窗口 [kL, (k+1)L)；窗口内各线程用按 NUMA 节点划分的原子计数器领取对象，
批量处理该对象在窗口内的全部事件，窗口结束时所有线程在屏障处汇合
"""

import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

from .atomics import AtomicCounter
from .core import (EventKey, EventRecord, EventStatus, Fingerprint, RngStream,
                   chain_key, model_fingerprint, virtual_time)
from .errors import (InvalidParameterError, LookaheadViolationError,
                     UnsupportedLookaheadError)
from .event_pool import ObjectCalendar, bucket_index
from .metrics import RunMetrics, StopCondition, WallClock
from .model_contract import Emit, Model
from .topology import (Topology, discover, first_touch_owners, make_placement,
                       pin_current_thread)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

EventOrder = Callable[[List[EventRecord]], List[EventRecord]]


@dataclass(frozen=True)
class WindowState:
    """
    第 k 个窗口 [k·L, (k+1)·L)

    Args:
        k: 窗口编号，-1 表示初始化阶段
        start: 窗口下界 k·L
        end: 窗口上界 (k+1)·L
        cutoff: 事件预算在窗口中途耗尽时，只处理键不超过 cutoff 的事件
    """
    k: int
    start: float
    end: float
    cutoff: Optional[EventKey] = None

    @classmethod
    def at(cls, k: int, lookahead: float, cutoff: Optional[EventKey] = None) -> "WindowState":
        return cls(k, k * lookahead, (k + 1) * lookahead, cutoff)


class PickCounters:
    """
    每个 NUMA 节点一个原子计数器，遍历归属该节点的对象编号
    本节点用完后按 (my_node+1) mod n 起的升序依次从远端节点领取

    Args:
        object_home: 每个对象的归属节点
        node_ids: 拓扑中的节点编号 (按拓扑顺序)
        record: 是否记录每个窗口的发放日志
    """

    def __init__(self, object_home: List[int], node_ids: List[int], record: bool = False):
        self.node_ids = list(node_ids)
        self.objects: Dict[int, List[int]] = {node: [] for node in self.node_ids}
        for obj, node in enumerate(object_home):
            self.objects[node].append(obj)
        self.counters = {node: AtomicCounter(0) for node in self.node_ids}
        self.record = record
        self.log: List[List[int]] = []

    def reset(self):
        for counter in self.counters.values():
            counter.store(0)
        if self.record:
            self.log.append([])

    def steal_order(self, my_node: int) -> List[int]:
        n = len(self.node_ids)
        i = self.node_ids.index(my_node)
        return [self.node_ids[(i + d) % n] for d in range(n)]

    def pick(self, my_node: int) -> Optional[int]:
        for node in self.steal_order(my_node):
            i = self.counters[node].fetch_add(1)
            objs = self.objects[node]
            if i < len(objs):
                obj = objs[i]
                if self.record:
                    self.log[-1].append(obj)
                return obj
        return None


def pick_object(counters: PickCounters, my_node: int) -> Optional[int]:
    """从本节点计数器领取下一个对象编号，用完后从远端节点领取；全部用完返回 None"""
    return counters.pick(my_node)


class CentralizedBarrier:
    """
    感知反转的集中式屏障
    最后到达的线程在唤醒其他线程之前执行一次串行动作 (推进窗口)；
    任一线程出错时屏障被打破，所有等待者立即返回

    Args:
        num_threads: 参与线程数
        action: 最后到达者执行的串行动作
    """

    def __init__(self, num_threads: int, action: Optional[Callable[[], None]] = None):
        self.num_threads = num_threads
        self.count = num_threads
        self.sense = False
        self.generation = 0
        self.broken = False
        self.action = action
        self.local_sense = threading.local()
        self.lock = threading.Lock()
        self.barrier_condition = threading.Condition(self.lock)

    def wait(self) -> bool:
        """
        等待全部线程到达

        Returns:
            屏障被打破时返回 False
        """
        with self.lock:
            if self.broken:
                return False
            current_sense = not self.sense
            self.local_sense.value = current_sense
            self.count -= 1
            if self.count == 0:
                self.count = self.num_threads
                try:
                    if self.action is not None:
                        self.action()
                except BaseException:
                    self.broken = True
                    self.barrier_condition.notify_all()
                    raise
                self.generation += 1
                self.sense = current_sense
                self.barrier_condition.notify_all()
            else:
                while self.sense != current_sense and not self.broken:
                    self.barrier_condition.wait()
            return not self.broken

    def abort(self):
        with self.lock:
            self.broken = True
            self.barrier_condition.notify_all()


class ConservativeEngine:
    """
    保守引擎

    Args:
        model: 仿真模型，前瞻必须为正
        n_threads: 工作线程数
        topology: 机器拓扑，默认自动发现
        stop: 停止条件
        policy: clustered 或 circular
        record_trace: 是否记录每个对象的提交键序列
        audit: 是否记录派发、发放和窗口进入日志
        event_order: 窗口内事件顺序钩子 (仅用于负面对照测试)
        pin: 是否尽力绑定线程到逻辑 CPU
    """

    def __init__(self, model: Model, n_threads: int, topology: Optional[Topology] = None,
                 stop: Optional[StopCondition] = None, policy: str = "circular",
                 record_trace: bool = False, audit: bool = False,
                 event_order: Optional[EventOrder] = None, pin: bool = True):
        if not model.lookahead > 0:
            raise UnsupportedLookaheadError(
                f"保守引擎需要正的前瞻，模型 {model.name} 的前瞻为 {model.lookahead}")
        if n_threads < 1:
            raise InvalidParameterError(f"线程数必须为正: {n_threads}")
        if stop is None:
            raise InvalidParameterError("需要停止条件")
        self.model = model
        self.n_threads = n_threads
        self.stop = stop
        self.topology = topology or discover()
        self.placement = make_placement(n_threads, model.n_objects, self.topology, policy)
        self.lookahead = model.lookahead
        n = model.n_objects
        self.calendars = [ObjectCalendar(i, self.lookahead) for i in range(n)]
        self.states: List[Any] = [None] * n
        self.rngs = [RngStream(model.seed, i) for i in range(n)]
        self.digests = [0] * n
        self.record_trace = record_trace
        self.traces: Dict[int, List[EventKey]] = {i: [] for i in range(n)} if record_trace else {}
        self.audit = audit
        self.event_order = event_order
        self.pin = pin
        self._seq = [0] * n
        self.counters = PickCounters(self.placement.object_home,
                                     [node.node_id for node in self.topology.nodes], record=audit)
        self.barrier = CentralizedBarrier(n_threads, self._advance)
        self.window = WindowState.at(-1, self.lookahead)
        self.done = False
        self.windows_run = 0
        self.metrics = RunMetrics()
        self._window_counts = [0] * n_threads
        self._committed = 0
        self._clock: Optional[WallClock] = None
        self._warmed = False
        self._errors: List[BaseException] = []
        self.dispatch_log: List[Tuple[int, EventKey]] = []
        self.emit_log: List[Tuple[EventKey, EventKey]] = []
        self.window_log: List[Tuple[int, int]] = []

    def _emitter(self, src: int, current: Optional[EventKey], k: int) -> Emit:
        n = self.model.n_objects
        L = self.lookahead

        def emit(ts: float, dst: int, kind: str, payload: Any = None):
            if not 0 <= dst < n:
                raise InvalidParameterError(f"目的对象越界: {dst}")
            key = EventKey(virtual_time(ts), dst, src, self._seq[src])
            self._seq[src] += 1
            if current is None:
                b = None
            else:
                if key.ts < current.ts + L:
                    raise LookaheadViolationError(
                        f"事件 {current} 调度的 {key} 违反前瞻 L={L}")
                # 浮点舍入可能让 ts_now + L 落回当前窗口，强制放入后续窗口
                b = max(bucket_index(key.ts, L), k + 1)
                if self.audit:
                    self.emit_log.append((current, key))
            self.calendars[dst].insert(EventRecord(key, kind, payload), b)

        return emit

    def process_object_window(self, obj: int, window: WindowState) -> int:
        """
        取出对象在窗口内的事件并按键序派发

        Args:
            obj: 已领取的对象编号
            window: 当前窗口

        Returns:
            处理的事件数
        """
        k = window.k
        records = self.calendars[obj].drain_bucket(k, window.cutoff, self.stop.horizon)
        if self.event_order is not None:
            records = self.event_order(records)
        state = self.states[obj]
        rng = self.rngs[obj]
        digest = self.digests[obj]
        for record in records:
            key = record.key
            if self.audit:
                self.dispatch_log.append((k, key))
            record.transition(EventStatus.PENDING, EventStatus.IN_PROCESSING)
            state = self.model.on_event(state, record, rng, self._emitter(obj, key, k))
            record.transition(EventStatus.IN_PROCESSING, EventStatus.PROCESSED)
            digest = chain_key(digest, key)
            if self.record_trace:
                self.traces[obj].append(key)
        self.states[obj] = state
        self.digests[obj] = digest
        return len(records)

    def _advance(self):
        """屏障上的串行动作: 统计上一窗口，判断停止条件，选出下一个非空窗口"""
        self._committed += sum(self._window_counts)
        self._window_counts = [0] * self.n_threads
        clock = self._clock
        now = time.perf_counter()
        if not self._warmed and now >= clock.warmup_at:
            self.metrics.mark_warmup(self._committed, now - clock.start)
            self._warmed = True
        budget = self.stop.event_budget
        if now >= clock.deadline or self._committed >= budget:
            self.done = True
            return
        nonempty = [b for b in (c.min_bucket() for c in self.calendars) if b is not None]
        if not nonempty:
            self.done = True
            return
        k = min(nonempty)
        # 同一窗口再次出现说明剩下的都在虚拟时间上界之后
        if k * self.lookahead >= self.stop.horizon or k <= self.window.k:
            self.done = True
            return
        cutoff = None
        if math.isfinite(budget):
            remaining = int(budget - self._committed)
            keys = [key for c in self.calendars for key in c.peek_bucket(k)
                    if key.ts < self.stop.horizon]
            if len(keys) > remaining:
                keys.sort()
                cutoff = keys[remaining - 1]
        self.window = WindowState.at(k, self.lookahead, cutoff)
        self.counters.reset()
        self.windows_run += 1
        logger.debug("进入窗口 %d [%.6f, %.6f)", k, self.window.start, self.window.end)

    def end_window_barrier(self, k: int) -> bool:
        """在窗口 k 结束时等待全部线程；屏障被打破时返回 False"""
        return self.barrier.wait()

    def _worker(self, w: int, owned: List[int]):
        try:
            if self.pin:
                pin_current_thread(self.placement.thread_to_cpu[w])
            # 首次触碰: 本节点线程初始化归属本节点的对象
            for obj in owned:
                self.states[obj] = self.model.init(obj, self.rngs[obj], self._emitter(obj, None, -1))
            my_node = self.placement.thread_node[w]
            if not self.end_window_barrier(-1):
                return
            while not self.done:
                window = self.window
                k = window.k
                if self.audit:
                    self.window_log.append((w, k))
                count = 0
                obj = pick_object(self.counters, my_node)
                while obj is not None:
                    count += self.process_object_window(obj, window)
                    obj = pick_object(self.counters, my_node)
                self._window_counts[w] = count
                if not self.end_window_barrier(k):
                    return
        except BaseException as e:
            self._errors.append(e)
            self.barrier.abort()

    def run(self) -> Tuple[RunMetrics, Fingerprint]:
        """运行到停止条件，返回指标与合并指纹"""
        logger.info("保守引擎开始: %s, %d 线程, 放置 %s",
                    self.model.describe(), self.n_threads, self.placement.policy)
        self._clock = WallClock(self.stop)
        self._warmed = self._clock.warmup_at == math.inf
        owners = first_touch_owners(self.placement, self.n_threads)
        threads = [threading.Thread(target=self._worker, args=(w, owners[w]),
                                    name=f"pdes-conservative-{w}")
                   for w in range(self.n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._errors:
            raise self._errors[0]
        self.metrics.committed_events = self._committed
        self.metrics.processed_events = self._committed
        self.metrics.rollbacks = 0
        self.metrics.wall_seconds = self._clock.elapsed()
        self.metrics.extras["windows"] = self.windows_run
        self.metrics.extras["bucket_contention"] = sum(c.contended_total() for c in self.calendars)
        fingerprint = model_fingerprint(self.model, self.states, self.digests)
        logger.info("保守引擎结束: 提交 %d 个事件, %d 个窗口, 用时 %.3f 秒, 指纹 %s",
                    self._committed, self.windows_run, self.metrics.wall_seconds, fingerprint.hex())
        return self.metrics, fingerprint

    def pending(self) -> List[EventRecord]:
        """尚未处理的事件，按键序"""
        return sorted((r for c in self.calendars for r in c.records()), key=lambda r: r.key)


def run_conservative(model: Model, n_threads: int, topology: Optional[Topology],
                     stop: StopCondition, policy: str = "circular",
                     record_trace: bool = False) -> Tuple[RunMetrics, Fingerprint]:
    """
    保守并行运行模型

    Args:
        model: 仿真模型 (前瞻 > 0)
        n_threads: 工作线程数
        topology: 拓扑；None 时自动发现
        stop: 停止条件
        policy: 放置策略
        record_trace: 是否记录提交键序列

    Returns:
        (运行指标, 合并指纹)
    """
    return ConservativeEngine(model, n_threads, topology, stop, policy, record_trace).run()
