"""
乐观同步引擎
所有事件放在一个全共享日历队列里，线程用原子取最小操作投机执行；
对象被短期绑定在一个虚拟时间窗口内，周期性保存检查点，乱序时回滚并用失效标记湮灭后续事件，
轮次式 GVT 归约确定提交点并做化石回收
"""

import logging
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple, Union

from .atomics import AtomicWord
from .core import (EventKey, EventRecord, EventStatus, Fingerprint, ObjectId,
                   RngStream, chain_key, model_fingerprint, virtual_time)
from .engine_conservative import CentralizedBarrier
from .errors import (CausalityViolationError, InvalidParameterError,
                     RollbackError)
from .event_pool import (EventHandle, MarkOutcome, SharedCalendarQueue,
                         estimate_bucket_width, mark_invalid)
from .metrics import RunMetrics, StopCondition, WallClock
from .model_contract import Emit, Model
from .topology import (Topology, discover, first_touch_owners, make_placement,
                       pin_current_thread)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

CHECKPOINT_INTERVAL = 16
GVT_PERIOD = 4096
RECENT_OBJECTS = 8
IDLE_SLEEP = 0.0005


@dataclass
class Checkpoint:
    """
    对象状态快照

    Args:
        obj: 对象编号
        pos: 快照之前已处理的日志条目数 (绝对位置)
        at_key: 快照包含的最后一个事件的键，初始快照为 None
        snapshot: 状态副本
        rng_state: 随机流状态
        seq: 对象的发送序号
    """
    obj: ObjectId
    pos: int
    at_key: Optional[EventKey]
    snapshot: Any
    rng_state: Dict
    seq: int

    @property
    def at(self) -> float:
        return 0.0 if self.at_key is None else self.at_key.ts


@dataclass
class LogEntry:
    """因果日志中的一条: 已处理事件及其产生的事件句柄"""
    key: EventKey
    record: EventRecord
    handle: EventHandle
    generated: List[EventHandle] = field(default_factory=list)
    # 是否在预热结束之后处理
    measured: bool = True


@dataclass
class BindWindow:
    """线程对对象的短期绑定，只处理时间戳小于 start + span 的事件"""
    obj: ObjectId
    start: float
    span: float
    handle: EventHandle


class ObjectSlot:
    """
    单个仿真对象的投机执行上下文
    bind 是绑定字 (None 表示空闲)，request 保存其他线程请求的最小回滚键
    """

    __slots__ = ("obj", "bind", "request", "state", "rng", "seq", "last_key", "floor_key",
                 "history", "base", "checkpoints", "since_checkpoint",
                 "digested", "digest", "trace", "measured_commits")

    def __init__(self, obj: ObjectId, rng: RngStream):
        self.obj = obj
        self.bind = AtomicWord(None)
        self.request = AtomicWord(None)
        self.state: Any = None
        self.rng = rng
        self.seq = 0
        self.last_key: Optional[EventKey] = None
        self.floor_key: Optional[EventKey] = None
        self.history: List[LogEntry] = []
        self.base = 0
        self.checkpoints: List[Checkpoint] = []
        self.since_checkpoint = 0
        self.digested = 0
        self.digest = 0
        self.trace: List[EventKey] = []
        self.measured_commits = 0


class GvtManager:
    """
    轮次式 GVT 归约
    ack: 每个线程在不持有绑定时确认，并清零自己的局部最小值；
    最后一个确认者读取队列最小待处理时间戳和最小回滚请求；
    report: 每个线程上报确认以来取到、发出、重新挂起和请求过的最小时间戳
    """

    IDLE = "idle"
    ACK = "ack"
    REPORT = "report"

    def __init__(self, engine: "OptimisticEngine", n_workers: int):
        self.engine = engine
        self.n_workers = n_workers
        self._lock = threading.Lock()
        self.phase = self.IDLE
        self.value = 0.0
        self.rounds = 0
        self.values: List[float] = []
        self._acked: set = set()
        self._reported: set = set()
        self._base = math.inf
        self._reports = math.inf

    def request_round(self):
        with self._lock:
            if self.phase == self.IDLE:
                self.phase = self.ACK
                self._acked.clear()
                self._reported.clear()
                self._base = math.inf
                self._reports = math.inf

    def safe_point(self, w: int):
        """工作线程在不持有任何绑定时调用"""
        if self.phase == self.IDLE:
            return
        with self._lock:
            if self.phase == self.ACK and w not in self._acked:
                self.engine._local_min[w] = math.inf
                self._acked.add(w)
                if len(self._acked) < self.n_workers:
                    return
                self._base = self.engine.pool_bound()
                self.phase = self.REPORT
            if self.phase == self.REPORT and w not in self._reported:
                self._reported.add(w)
                self._reports = min(self._reports, self.engine._local_min[w])
                if len(self._reported) == self.n_workers:
                    self.phase = self.IDLE
                    value, quiescent = self._settle(min(self._base, self._reports))
                    self.engine._after_gvt(value, quiescent)

    def _settle(self, raw: float) -> Tuple[float, bool]:
        quiescent = raw == math.inf
        candidate = self.engine.max_processed_ts() if quiescent else raw
        self.value = max(self.value, candidate)
        self.rounds += 1
        self.values.append(self.value)
        logger.debug("GVT 第 %d 轮: %.6f%s", self.rounds, self.value, " (静止)" if quiescent else "")
        return self.value, quiescent

    def settle(self, raw: float) -> float:
        with self._lock:
            return self._settle(raw)[0]


class OptimisticEngine:
    """
    乐观引擎

    Args:
        model: 仿真模型，前瞻可以为 0
        n_threads: 工作线程数
        topology: 机器拓扑，默认自动发现
        stop: 停止条件
        policy: clustered 或 circular
        record_trace: 是否记录每个对象的提交键序列
        checkpoint_interval: 每处理多少个事件保存一次检查点
        gvt_period: 每个线程每取多少个事件发起一轮 GVT
        bind_span: 绑定窗口 Δ，默认等于队列桶宽；单线程时为 0
        band: 近期对象与本节点对象的低时间戳带宽，默认等于 bind_span
        recent: 每个线程记住的近期对象数
        bucket_width: 队列桶宽，默认按初始事件估计
        pin: 是否尽力绑定线程到逻辑 CPU
    """

    def __init__(self, model: Model, n_threads: int, topology: Optional[Topology] = None,
                 stop: Optional[StopCondition] = None, policy: str = "clustered",
                 record_trace: bool = False, checkpoint_interval: int = CHECKPOINT_INTERVAL,
                 gvt_period: int = GVT_PERIOD, bind_span: Optional[float] = None,
                 band: Optional[float] = None, recent: int = RECENT_OBJECTS,
                 bucket_width: Optional[float] = None, pin: bool = True):
        if n_threads < 1:
            raise InvalidParameterError(f"线程数必须为正: {n_threads}")
        if checkpoint_interval < 1 or gvt_period < 1:
            raise InvalidParameterError(
                f"检查点间隔与 GVT 周期必须为正: {checkpoint_interval}, {gvt_period}")
        if stop is None:
            raise InvalidParameterError("需要停止条件")
        self.model = model
        self.n_threads = n_threads
        self.stop = stop
        self.topology = topology or discover()
        self.placement = make_placement(n_threads, model.n_objects, self.topology, policy)
        self.record_trace = record_trace
        self.checkpoint_interval = checkpoint_interval
        self.gvt_period = gvt_period
        self._bind_span = bind_span
        self._band = band
        self.bucket_width = bucket_width
        self.pin = pin
        self.span = 0.0
        self.band = 0.0
        self.slots = [ObjectSlot(i, RngStream(model.seed, i)) for i in range(model.n_objects)]
        self.queue: Optional[SharedCalendarQueue] = None
        self.gvt = GvtManager(self, n_threads)
        self.commit_gvt = AtomicWord(0.0)
        self.metrics = RunMetrics()
        self._halt = threading.Event()
        self._local_min = [math.inf] * n_threads
        self._max_ts = [0.0] * n_threads
        self._processed = [0] * n_threads
        self._rollbacks = [0] * n_threads
        self._undone = [0] * n_threads
        self._fetches = [0] * n_threads
        self._last_round = [0] * n_threads
        self._recent: List[Deque[int]] = [deque(maxlen=max(recent, 1)) for _ in range(n_threads)]
        self._worklists: List[List[int]] = [[] for _ in range(n_threads)]
        self._init_records: List[List[EventRecord]] = [[] for _ in range(n_threads)]
        self._clock: Optional[WallClock] = None
        self._warmed = stop.wall_seconds is None
        self._measuring = self._warmed
        self._errors: List[BaseException] = []

    # ---- 初始化 -------------------------------------------------------------

    def _emitter(self, slot: ObjectSlot, current: Optional[EventKey],
                 out: Optional[List[EventRecord]]) -> Emit:
        """out 为 None 时只推进发送序号 (回滚后的前滚)"""
        n = self.model.n_objects

        def emit(ts: float, dst: int, kind: str, payload: Any = None):
            if not 0 <= dst < n:
                raise InvalidParameterError(f"目的对象越界: {dst}")
            key = EventKey(virtual_time(ts), dst, slot.obj, slot.seq)
            slot.seq += 1
            if current is not None and not key > current:
                raise CausalityViolationError(
                    f"对象 {slot.obj} 在处理 {current} 时调度了更早的事件 {key}")
            if out is not None:
                out.append(EventRecord(key, kind, payload))

        return emit

    def _init_object(self, obj: ObjectId, out: List[EventRecord]):
        slot = self.slots[obj]
        slot.state = self.model.init(obj, slot.rng, self._emitter(slot, None, out))
        slot.checkpoints = [Checkpoint(obj, 0, None, self.model.copy_state(slot.state),
                                       slot.rng.get_state(), slot.seq)]

    def _install(self):
        records = [r for batch in self._init_records for r in batch]
        self._init_records = [[] for _ in range(self.n_threads)]
        width = self.bucket_width or estimate_bucket_width(r.key.ts for r in records)
        self.queue = SharedCalendarQueue(width)
        if self.n_threads == 1:
            self.span, self.band = 0.0, 0.0
        else:
            self.span = width if self._bind_span is None else float(self._bind_span)
            self.band = self.span if self._band is None else float(self._band)
        for record in records:
            self.queue.insert(record)
        logger.debug("共享队列就绪: %d 个初始事件, 桶宽 %.6g, Δ=%.6g", len(records), width, self.span)

    def initialize(self):
        """在调用线程上初始化全部对象并建立共享队列"""
        for obj in range(self.model.n_objects):
            self._init_object(obj, self._init_records[0])
        self._install()

    # ---- GVT 辅助 -----------------------------------------------------------

    def _note(self, w: int, ts: float):
        if ts < self._local_min[w]:
            self._local_min[w] = ts

    def request_min(self) -> float:
        """尚未处理的回滚请求中的最小时间戳"""
        low = math.inf
        for slot in self.slots:
            key = slot.request.load()
            if key is not None and key.ts < low:
                low = key.ts
        return low

    def pool_bound(self) -> float:
        return min(self.queue.min_pending_ts(), self.request_min())

    def max_processed_ts(self) -> float:
        return max(self._max_ts)

    def compute_gvt(self) -> float:
        """
        没有工作线程运行时直接计算 GVT；队列和请求都为空时返回最后处理的时间戳

        Returns:
            单调不减的 GVT
        """
        return self.gvt.settle(self.pool_bound())

    def _after_gvt(self, value: float, quiescent: bool):
        if quiescent or value >= self.stop.horizon:
            self._halt.set()
            return
        self.queue.fossil_collect(value)
        total = self.queue.committed_total
        budget = self.stop.event_budget
        if total <= budget:
            self.commit_gvt.store(value)
        if total >= budget:
            self._halt.set()

    def fossil_collect(self, gvt: float) -> int:
        """
        回收低于 gvt 的已处理事件、失效墓碑、日志条目和多余检查点；
        每个对象至少保留一个 at <= gvt 的检查点

        Returns:
            队列中回收的事件数
        """
        reclaimed = self.queue.fossil_collect(gvt)
        for slot in self.slots:
            if slot.bind.compare_and_swap(None, -1):
                try:
                    self._collect_object(slot, gvt)
                finally:
                    slot.bind.store(None)
        return reclaimed

    def _collect_object(self, slot: ObjectSlot, g: float):
        """把时间戳低于 g 的日志条目串入提交摘要，并丢掉最近一个安全检查点之前的部分"""
        hist = slot.history
        j = slot.digested - slot.base
        while j < len(hist) and hist[j].key.ts < g:
            slot.digest = chain_key(slot.digest, hist[j].key)
            if hist[j].measured:
                slot.measured_commits += 1
            if self.record_trace:
                slot.trace.append(hist[j].key)
            j += 1
        slot.digested = slot.base + j
        k = 0
        for i, cp in enumerate(slot.checkpoints):
            if cp.pos <= slot.digested:
                k = i
        if k == 0:
            return
        cp = slot.checkpoints[k]
        drop = cp.pos - slot.base
        if drop > 0:
            slot.floor_key = hist[drop - 1].key
            del hist[:drop]
            slot.base = cp.pos
        del slot.checkpoints[:k]

    # ---- 绑定与投机执行 ------------------------------------------------------

    def _claimer(self, w: int, accept: Optional[Callable[[int], bool]]):
        def claim(record: EventRecord) -> bool:
            obj = record.key.dst
            if accept is not None and not accept(obj):
                return False
            return self.slots[obj].bind.compare_and_swap(None, w)
        return claim

    def _unbinder(self, w: int):
        def on_fail(record: EventRecord):
            self._release(w, self.slots[record.key.dst])
        return on_fail

    def _release(self, w: int, slot: ObjectSlot):
        slot.bind.store(None)
        if slot.request.load() is not None:
            self._worklists[w].append(slot.obj)

    def acquire_and_bind(self, w: int) -> Optional[BindWindow]:
        """
        三级优先取事件并绑定其对象:
        近期处理过且处于低时间戳带内的对象，本节点归属对象，全局最小事件

        Args:
            w: 工作线程编号

        Returns:
            绑定窗口；队列中没有可取事件时返回 None
        """
        q = self.queue
        horizon = self.stop.horizon
        on_fail = self._unbinder(w)
        handle = None
        if self.band > 0:
            gmin = q.min_pending_ts()
            if gmin == math.inf:
                return None
            limit = min(gmin + self.band, horizon)
            recent = set(self._recent[w])
            if recent:
                handle = q.fetch_min(self._claimer(w, recent.__contains__), limit, on_fail)
            if handle is None:
                home = self.placement.object_home
                my_node = self.placement.thread_node[w]
                handle = q.fetch_min(self._claimer(w, lambda o: home[o] == my_node), limit, on_fail)
        if handle is None:
            handle = q.fetch_min(self._claimer(w, None), horizon, on_fail)
        if handle is None:
            return None
        self._fetches[w] += 1
        self._note(w, handle.key.ts)
        obj = handle.key.dst
        recent_objs = self._recent[w]
        if obj in recent_objs:
            recent_objs.remove(obj)
        recent_objs.append(obj)
        return BindWindow(obj, handle.key.ts, self.span, handle)

    def speculative_process(self, w: int, bind: BindWindow) -> int:
        """
        在绑定窗口内按键序处理对象的待处理事件，结束时释放绑定

        Returns:
            处理的事件数
        """
        slot = self.slots[bind.obj]
        limit = min(bind.start + bind.span, self.stop.horizon)
        handle: Optional[EventHandle] = bind.handle
        count = 0
        try:
            self._collect_object(slot, self.commit_gvt.load())
            while handle is not None:
                self._service(w, slot)
                key = handle.key
                if slot.last_key is not None and key < slot.last_key:
                    self._rollback(w, slot, key)
                if handle.record.status is EventStatus.IN_PROCESSING:
                    self._process(w, slot, handle)
                    count += 1
                if bind.span <= 0 or self._halt.is_set():
                    break
                handle = self.queue.fetch_min(lambda r, o=bind.obj: r.key.dst == o, limit)
                if handle is not None:
                    self._fetches[w] += 1
                    self._note(w, handle.key.ts)
        finally:
            self._release(w, slot)
        return count

    def _process(self, w: int, slot: ObjectSlot, handle: EventHandle):
        record = handle.record
        key = record.key
        out: List[EventRecord] = []
        slot.state = self.model.on_event(slot.state, record, slot.rng, self._emitter(slot, key, out))
        entry = LogEntry(key, record, handle, measured=self._measuring)
        slot.history.append(entry)
        slot.last_key = key
        self._processed[w] += 1
        if key.ts > self._max_ts[w]:
            self._max_ts[w] = key.ts
        if not record.transition(EventStatus.IN_PROCESSING, EventStatus.PROCESSED):
            # 处理期间被失效，产生的事件从未发布
            self._rollback(w, slot, key)
            return
        for generated in out:
            entry.generated.append(self.queue.insert(generated))
            self._note(w, generated.key.ts)
        slot.since_checkpoint += 1
        if slot.since_checkpoint >= self.checkpoint_interval:
            slot.checkpoints.append(Checkpoint(
                slot.obj, slot.base + len(slot.history), key,
                self.model.copy_state(slot.state), slot.rng.get_state(), slot.seq))
            slot.since_checkpoint = 0

    # ---- 回滚 ---------------------------------------------------------------

    def _post_request(self, w: int, key: EventKey):
        self.slots[key.dst].request.fetch_min(key)
        self._note(w, key.ts)
        self._worklists[w].append(key.dst)

    def _service(self, w: int, slot: ObjectSlot) -> int:
        key = slot.request.swap(None)
        if key is None:
            return 0
        self._note(w, key.ts)
        return self._rollback(w, slot, key)

    def _drain_worklist(self, w: int):
        """尝试绑定收到回滚请求的对象并代为回滚；绑定失败时由持有者处理"""
        worklist = self._worklists[w]
        while worklist:
            slot = self.slots[worklist.pop()]
            if slot.request.load() is None:
                continue
            if slot.bind.compare_and_swap(None, w):
                try:
                    self._service(w, slot)
                finally:
                    self._release(w, slot)

    def _replay(self, slot: ObjectSlot, cp: Checkpoint, end_pos: int) -> Any:
        """从检查点恢复并前滚到绝对位置 end_pos，前滚期间不发送事件"""
        state = self.model.copy_state(cp.snapshot)
        slot.rng.set_state(cp.rng_state)
        slot.seq = cp.seq
        for entry in slot.history[cp.pos - slot.base:end_pos - slot.base]:
            state = self.model.on_event(state, entry.record, slot.rng,
                                        self._emitter(slot, entry.key, None))
        return state

    def _checkpoint_at_or_before(self, slot: ObjectSlot, pos: int) -> int:
        for i in range(len(slot.checkpoints) - 1, -1, -1):
            if slot.checkpoints[i].pos <= pos:
                return i
        raise RollbackError(
            f"对象 {slot.obj} 没有位置不超过 {pos} 的检查点 (最早 {slot.checkpoints[0].pos})"
            if slot.checkpoints else f"对象 {slot.obj} 没有检查点")

    def _rollback(self, w: int, slot: ObjectSlot, key: EventKey) -> int:
        hist = slot.history
        i = len(hist)
        while i > 0 and hist[i - 1].key >= key:
            i -= 1
        if i == len(hist):
            return 0
        first_pos = slot.base + i
        if first_pos < slot.digested:
            raise RollbackError(f"对象 {slot.obj} 回滚到已提交的事件之前: {key}")
        for entry in hist[i:]:
            for generated in entry.generated:
                outcome = mark_invalid(generated)
                if outcome is MarkOutcome.WAS_PROCESSED and generated.key.dst != slot.obj:
                    self._post_request(w, generated.key)
            if entry.record.status is EventStatus.PROCESSED:
                self.queue.requeue(entry.handle)
                self._note(w, entry.key.ts)
        undone = len(hist) - i
        c = self._checkpoint_at_or_before(slot, first_pos)
        cp = slot.checkpoints[c]
        del slot.checkpoints[c + 1:]
        slot.state = self._replay(slot, cp, first_pos)
        del hist[i:]
        slot.last_key = hist[-1].key if hist else slot.floor_key
        slot.since_checkpoint = first_pos - cp.pos
        self._rollbacks[w] += 1
        self._undone[w] += undone
        logger.debug("对象 %d 回滚到 %s, 撤销 %d 个事件", slot.obj, key, undone)
        return undone

    def rollback(self, obj: ObjectId, straggler: Union[EventKey, float], w: int = 0) -> int:
        """
        把对象回滚到 straggler 之前 (浮点数表示该时间戳上的全部事件)，
        级联请求会在返回前尽量处理完

        Returns:
            本对象撤销的事件数
        """
        key = straggler if isinstance(straggler, EventKey) else EventKey(float(straggler), -1, -1, -1)
        slot = self.slots[obj]
        if not slot.bind.compare_and_swap(None, w):
            raise InvalidParameterError(f"对象 {obj} 正被其他线程绑定")
        try:
            undone = self._rollback(w, slot, key)
        finally:
            self._release(w, slot)
        self._drain_worklist(w)
        return undone

    def step(self, w: int = 0) -> int:
        """单次取事件、绑定、投机执行；用于手动驱动"""
        self._drain_worklist(w)
        bind = self.acquire_and_bind(w)
        if bind is None:
            return 0
        count = self.speculative_process(w, bind)
        self._drain_worklist(w)
        return count

    # ---- 运行 ---------------------------------------------------------------

    def _worker(self, w: int, owned: List[int], barrier: CentralizedBarrier):
        try:
            if self.pin:
                pin_current_thread(self.placement.thread_to_cpu[w])
            for obj in owned:
                self._init_object(obj, self._init_records[w])
            if not barrier.wait():
                return
            clock = self._clock
            while not self._halt.is_set():
                self._drain_worklist(w)
                self.gvt.safe_point(w)
                if self._halt.is_set():
                    break
                now = time.perf_counter()
                if now >= clock.deadline:
                    self._halt.set()
                    break
                if w == 0 and not self._warmed and now >= clock.warmup_at:
                    self.begin_measurement(now - clock.start)
                bind = self.acquire_and_bind(w)
                if bind is None:
                    self.gvt.request_round()
                    time.sleep(IDLE_SLEEP)
                    continue
                self.speculative_process(w, bind)
                if self._fetches[w] - self._last_round[w] >= self.gvt_period:
                    self._last_round[w] = self._fetches[w]
                    self.gvt.request_round()
        except BaseException as e:
            self._errors.append(e)
            self._halt.set()
            barrier.abort()

    def _materialize(self) -> int:
        """
        运行结束后按最终 GVT 确定提交前缀: 取全局键序的前 N 个事件，
        把每个对象恢复到对应的截断位置并完成提交摘要

        Returns:
            提交事件总数
        """
        bound = min(self.pool_bound(), self.stop.horizon)
        digested = sum(slot.digested for slot in self.slots)
        candidates: List[EventKey] = []
        for slot in self.slots:
            for entry in slot.history[slot.digested - slot.base:]:
                if entry.key.ts < bound:
                    candidates.append(entry.key)
        candidates.sort()
        budget = self.stop.event_budget
        if math.isfinite(budget):
            candidates = candidates[:max(0, int(budget) - digested)]
        counts: Dict[int, int] = {}
        for key in candidates:
            counts[key.dst] = counts.get(key.dst, 0) + 1
        for slot in self.slots:
            cut = slot.digested + counts.get(slot.obj, 0)
            end = slot.base + len(slot.history)
            if cut != end:
                cp = slot.checkpoints[self._checkpoint_at_or_before(slot, cut)]
                slot.state = self._replay(slot, cp, cut)
            for entry in slot.history[slot.digested - slot.base:cut - slot.base]:
                slot.digest = chain_key(slot.digest, entry.key)
                if entry.measured:
                    slot.measured_commits += 1
                if self.record_trace:
                    slot.trace.append(entry.key)
            slot.digested = cut
        self.metrics.extras["final_gvt"] = bound
        return digested + len(candidates)

    def begin_measurement(self, elapsed: float):
        """
        预热结束: 记下此刻的处理数作为总吞吐量基线，之后处理的日志条目计入测量区间

        先取处理数快照再打开标记，测量区间内提交的条目都在快照之后处理过
        """
        processed = sum(self._processed)
        self._measuring = True
        self._warmed = True
        self.metrics.mark_warmup(self.queue.committed_total, elapsed, processed=processed)

    def _finish_metrics(self, committed: int):
        self.metrics.committed_events = committed
        self.metrics.processed_events = sum(self._processed)
        self.metrics.rollbacks = sum(self._rollbacks)
        self.metrics.undone_events = sum(self._undone)
        if self._warmed:
            # 提交基线 = 预热前处理、最终被提交的事件数
            measured = sum(slot.measured_commits for slot in self.slots)
            self.metrics.warmup_committed = committed - measured

    @property
    def traces(self) -> Dict[int, List[EventKey]]:
        return {slot.obj: slot.trace for slot in self.slots} if self.record_trace else {}

    def run(self) -> Tuple[RunMetrics, Fingerprint]:
        """运行到停止条件，返回指标与已提交状态的合并指纹"""
        logger.info("乐观引擎开始: %s, %d 线程, 放置 %s",
                    self.model.describe(), self.n_threads, self.placement.policy)
        self._clock = WallClock(self.stop)
        self._warmed = self._clock.warmup_at == math.inf
        barrier = CentralizedBarrier(self.n_threads, self._install)
        owners = first_touch_owners(self.placement, self.n_threads)
        threads = [threading.Thread(target=self._worker, args=(w, owners[w], barrier),
                                    name=f"pdes-optimistic-{w}")
                   for w in range(self.n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._errors:
            raise self._errors[0]
        self.metrics.wall_seconds = self._clock.elapsed()
        self._finish_metrics(self._materialize())
        self.metrics.extras["gvt_rounds"] = self.gvt.rounds
        self.metrics.extras["bucket_width"] = self.queue.bucket_width
        self.metrics.extras["bucket_contention"] = self.queue.contended_total()
        self.metrics.check()
        fingerprint = model_fingerprint(self.model, [s.state for s in self.slots],
                                        [s.digest for s in self.slots])
        logger.info("乐观引擎结束: 提交 %d / 处理 %d 个事件, 回滚 %d 次, 用时 %.3f 秒, 指纹 %s",
                    self.metrics.committed_events, self.metrics.processed_events,
                    self.metrics.rollbacks, self.metrics.wall_seconds, fingerprint.hex())
        return self.metrics, fingerprint


def run_optimistic(model: Model, n_threads: int, topology: Optional[Topology],
                   stop: StopCondition, policy: str = "clustered",
                   record_trace: bool = False, **options) -> Tuple[RunMetrics, Fingerprint]:
    """
    乐观并行运行模型

    Args:
        model: 仿真模型
        n_threads: 工作线程数
        topology: 拓扑；None 时自动发现
        stop: 停止条件
        policy: 放置策略
        record_trace: 是否记录提交键序列
        **options: 传给 OptimisticEngine 的调优参数

    Returns:
        (运行指标, 合并指纹)
    """
    return OptimisticEngine(model, n_threads, topology, stop, policy, record_trace, **options).run()
