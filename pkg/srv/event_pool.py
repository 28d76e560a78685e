"""
事件池模块
乐观引擎使用的全共享日历队列 (带失效标记)，以及保守引擎使用的按对象分桶日历
"""

import bisect
import logging
import math
import threading
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional

from .atomics import AtomicWord, BucketLock
from .core import EventKey, EventRecord, EventStatus, ObjectId
from .errors import (DestinationMismatchError, InvalidParameterError,
                     StaleHandleError, StaleInsertError)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_SPAN = 65536
WIDTH_SAMPLE = 4096


def bucket_index(ts: float, width: float) -> int:
    """
    计算时间戳所属的桶号

    Args:
        ts: 虚拟时间
        width: 桶宽，必须为正

    Returns:
        floor(ts / width)
    """
    if not width > 0:
        raise InvalidParameterError(f"桶宽必须为正: {width!r}")
    return math.floor(ts / width)


def estimate_bucket_width(timestamps: Iterable[float], sample: int = WIDTH_SAMPLE) -> float:
    """
    用最早的若干个时间戳估计平均事件间隔，作为共享队列的桶宽

    Args:
        timestamps: 初始事件时间戳
        sample: 参与估计的事件数

    Returns:
        正的桶宽；样本不足时返回 1.0
    """
    ts = sorted(timestamps)[:sample]
    if len(ts) < 2:
        return 1.0
    spacing = (ts[-1] - ts[0]) / (len(ts) - 1)
    return spacing if spacing > 0 else 1.0


class MarkOutcome(Enum):
    """mark_invalid 的结果，即失效前的状态"""
    WAS_PENDING = "was_pending"
    WAS_IN_PROCESSING = "was_in_processing"
    WAS_PROCESSED = "was_processed"
    WAS_INVALIDATED = "was_invalidated"


_OUTCOMES = {
    EventStatus.PENDING: MarkOutcome.WAS_PENDING,
    EventStatus.IN_PROCESSING: MarkOutcome.WAS_IN_PROCESSING,
    EventStatus.PROCESSED: MarkOutcome.WAS_PROCESSED,
    EventStatus.INVALIDATED: MarkOutcome.WAS_INVALIDATED,
}


class EventHandle:
    """已插入事件的稳定引用，化石回收后解引用会报错"""

    __slots__ = ("_record",)

    def __init__(self, record: EventRecord):
        self._record = record

    @property
    def record(self) -> EventRecord:
        if self._record.collected:
            raise StaleHandleError(f"事件已被回收: {self._record.key}")
        return self._record

    @property
    def key(self) -> EventKey:
        return self._record.key

    @property
    def status(self) -> EventStatus:
        return self.record.status

    def __repr__(self):
        return f"EventHandle({self._record!r})"


class _Bucket:
    """单个桶: 一把互斥字加上按键有序的并行列表"""

    __slots__ = ("lock", "keys", "records", "retired")

    def __init__(self):
        self.lock = BucketLock()
        self.keys: List[EventKey] = []
        self.records: List[EventRecord] = []
        self.retired = False

    def put(self, record: EventRecord):
        i = bisect.bisect_right(self.keys, record.key)
        self.keys.insert(i, record.key)
        self.records.insert(i, record)


class SharedCalendarQueue:
    """
    全共享的并发日历队列
    每个桶由自己的互斥字保护，不同桶上的操作互不阻塞；
    游标是可能含有待处理事件的最低桶号，插入时用原子 min 下调，
    只有在持有桶锁且桶内没有待处理事件时才用 CAS 前移一格

    Args:
        bucket_width: 桶宽 (虚拟时间)
        span: 直接分配的桶数，超出部分进入有序溢出表，按需提升
    """

    def __init__(self, bucket_width: float, span: int = DEFAULT_SPAN):
        if not bucket_width > 0:
            raise InvalidParameterError(f"桶宽必须为正: {bucket_width!r}")
        if span < 1:
            raise InvalidParameterError(f"桶跨度必须为正: {span!r}")
        self.bucket_width = float(bucket_width)
        self.span = span
        self._buckets: Dict[int, _Bucket] = {}
        self._ids: List[int] = []
        self._dir_lock = threading.Lock()
        self._limit = span
        self._overflow_keys: List[EventKey] = []
        self._overflow: List[EventRecord] = []
        self._cursor = AtomicWord(0)
        self._horizon = 0.0
        self._retired_contention = 0
        self.committed_total = 0

    @property
    def horizon(self) -> float:
        """化石回收水位，低于它的插入被拒绝"""
        return self._horizon

    @property
    def cursor(self) -> int:
        return self._cursor.load()

    def _bucket_for_insert(self, b: int) -> Optional[_Bucket]:
        """取得 (必要时分配) 桶号 b；若 b 超出直接分配范围返回 None"""
        bucket = self._buckets.get(b)
        if bucket is not None:
            return bucket
        with self._dir_lock:
            if b >= self._limit:
                return None
            bucket = self._buckets.get(b)
            if bucket is None:
                bucket = _Bucket()
                self._buckets[b] = bucket
                bisect.insort(self._ids, b)
            return bucket

    def insert(self, record: EventRecord) -> EventHandle:
        """
        插入一个待处理事件

        Args:
            record: 状态为 pending 的事件记录

        Returns:
            事件句柄
        """
        if record.status is not EventStatus.PENDING:
            raise InvalidParameterError(f"只能插入待处理事件: {record!r}")
        if record.key.ts < self._horizon:
            raise StaleInsertError(
                f"事件时间戳 {record.key.ts} 低于回收水位 {self._horizon}")
        b = bucket_index(record.key.ts, self.bucket_width)
        while True:
            bucket = self._bucket_for_insert(b)
            if bucket is None:
                with self._dir_lock:
                    if b >= self._limit:
                        i = bisect.bisect_right(self._overflow_keys, record.key)
                        self._overflow_keys.insert(i, record.key)
                        self._overflow.insert(i, record)
                        return EventHandle(record)
                continue
            with bucket.lock:
                if bucket.retired:
                    continue
                bucket.put(record)
            break
        self._cursor.fetch_min(b)
        return EventHandle(record)

    def _next_id(self, start: int) -> Optional[int]:
        """
        返回不小于 start 的最小已分配桶号
        游标正好停在 start 时顺带跳过中间的空洞；目录锁下不会有新桶分配
        """
        with self._dir_lock:
            i = bisect.bisect_left(self._ids, start)
            if i < len(self._ids):
                bid = self._ids[i]
                if bid > start:
                    self._cursor.compare_and_swap(start, bid)
                return bid
            return None

    def _promote(self, ts_limit: float) -> bool:
        """所有桶都没有可取事件时，把溢出表的一段提升为普通桶"""
        with self._dir_lock:
            if not self._overflow or self._overflow_keys[0].ts >= ts_limit:
                return False
            first = bucket_index(self._overflow_keys[0].ts, self.bucket_width)
            self._limit = max(self._limit, first + self.span)
            moved = 0
            while moved < len(self._overflow):
                b = bucket_index(self._overflow_keys[moved].ts, self.bucket_width)
                if b >= self._limit:
                    break
                bucket = self._buckets.get(b)
                if bucket is None:
                    bucket = _Bucket()
                    self._buckets[b] = bucket
                    bisect.insort(self._ids, b)
                with bucket.lock:
                    bucket.put(self._overflow[moved])
                moved += 1
            del self._overflow_keys[:moved]
            del self._overflow[:moved]
            self._cursor.fetch_min(first)
        logger.debug("溢出表提升 %d 个事件，直接分配上界 %d", moved, self._limit)
        return moved > 0

    def fetch_min(self,
                  claim: Optional[Callable[[EventRecord], bool]] = None,
                  ts_limit: float = math.inf,
                  on_fail: Optional[Callable[[EventRecord], None]] = None) -> Optional[EventHandle]:
        """
        按键序取出第一个待处理事件并原子地置为 in_processing

        Args:
            claim: 候选过滤器；返回 False 时跳过该事件继续向后找
            ts_limit: 只考虑时间戳严格小于它的事件
            on_fail: claim 成功但状态 CAS 失败时的回调 (用于撤销绑定)

        Returns:
            事件句柄；没有符合条件的事件时返回 None
        """
        while True:
            bid = self._next_id(self._cursor.load())
            while bid is not None:
                if bid * self.bucket_width >= ts_limit:
                    return None
                bucket = self._buckets.get(bid)
                if bucket is not None:
                    with bucket.lock:
                        if not bucket.retired:
                            has_pending = False
                            for rec in bucket.records:
                                if rec.key.ts >= ts_limit:
                                    return None
                                if rec.status is not EventStatus.PENDING:
                                    continue
                                has_pending = True
                                if claim is not None and not claim(rec):
                                    continue
                                if rec.transition(EventStatus.PENDING, EventStatus.IN_PROCESSING):
                                    return EventHandle(rec)
                                if on_fail is not None:
                                    on_fail(rec)
                            if not has_pending:
                                self._cursor.compare_and_swap(bid, bid + 1)
                bid = self._next_id(bid + 1)
            if not self._promote(ts_limit):
                return None

    def mark_invalid(self, handle: EventHandle) -> MarkOutcome:
        return mark_invalid(handle)

    def requeue(self, handle: EventHandle) -> bool:
        """
        回滚时把已处理但仍有效的事件重新挂起

        Returns:
            是否成功从 processed 变回 pending
        """
        record = handle.record
        b = bucket_index(record.key.ts, self.bucket_width)
        bucket = self._buckets.get(b)
        if bucket is None:
            raise StaleHandleError(f"事件所在的桶已回收: {record.key}")
        with bucket.lock:
            ok = record.transition(EventStatus.PROCESSED, EventStatus.PENDING)
        if ok:
            self._cursor.fetch_min(b)
        return ok

    def min_pending_ts(self) -> float:
        """当前最小待处理事件的时间戳，没有时返回正无穷"""
        bid = self._next_id(self._cursor.load())
        while bid is not None:
            bucket = self._buckets.get(bid)
            if bucket is not None:
                with bucket.lock:
                    for rec in bucket.records:
                        if rec.status is EventStatus.PENDING:
                            return rec.key.ts
            bid = self._next_id(bid + 1)
        with self._dir_lock:
            for rec in self._overflow:
                if rec.status is EventStatus.PENDING:
                    return rec.key.ts
        return math.inf

    def pending_records(self) -> List[EventRecord]:
        """按键序列出所有待处理事件 (仅用于单线程检查)"""
        out = []
        with self._dir_lock:
            ids = list(self._ids)
            overflow = list(self._overflow)
        for bid in ids:
            bucket = self._buckets.get(bid)
            if bucket is None:
                continue
            with bucket.lock:
                out.extend(r for r in bucket.records if r.status is EventStatus.PENDING)
        out.extend(r for r in overflow if r.status is EventStatus.PENDING)
        return out

    def fossil_collect(self, gvt: float) -> int:
        """
        回收时间戳严格低于 gvt 的已处理事件和失效墓碑

        Args:
            gvt: 全局虚拟时间

        Returns:
            回收的事件数
        """
        reclaimed = 0
        committed = 0
        with self._dir_lock:
            if gvt > self._horizon:
                self._horizon = gvt
            end = bisect.bisect_left(self._ids, bucket_index(gvt, self.bucket_width) + 1) \
                if math.isfinite(gvt) else len(self._ids)
            emptied = []
            for bid in self._ids[:end]:
                bucket = self._buckets[bid]
                with bucket.lock:
                    keep_keys, keep = [], []
                    for key, rec in zip(bucket.keys, bucket.records):
                        status = rec.status
                        if key.ts < gvt and status in (EventStatus.PROCESSED, EventStatus.INVALIDATED):
                            rec.collected = True
                            reclaimed += 1
                            if status is EventStatus.PROCESSED:
                                committed += 1
                        else:
                            keep_keys.append(key)
                            keep.append(rec)
                    bucket.keys, bucket.records = keep_keys, keep
                    if not keep and (bid + 1) * self.bucket_width <= gvt:
                        bucket.retired = True
                        self._retired_contention += bucket.lock.contended
                        emptied.append(bid)
            for bid in emptied:
                del self._buckets[bid]
            if emptied:
                drop = set(emptied)
                self._ids = [b for b in self._ids if b not in drop]
            self.committed_total += committed
        logger.debug("化石回收 gvt=%.6f 回收 %d 个事件 (提交 %d)", gvt, reclaimed, committed)
        return reclaimed

    def contended_total(self) -> int:
        """所有桶互斥字上累计的争用次数"""
        with self._dir_lock:
            live = sum(b.lock.contended for b in self._buckets.values())
        return live + self._retired_contention


class ObjectCalendar:
    """
    单个仿真对象的分桶日历
    每个桶一把互斥字，只有桶的分配和删除走目录锁

    Args:
        owner: 所属对象编号
        bucket_width: 桶宽，保守引擎中等于前瞻 L
    """

    def __init__(self, owner: ObjectId, bucket_width: float):
        if not bucket_width > 0:
            raise InvalidParameterError(f"桶宽必须为正: {bucket_width!r}")
        self.owner = owner
        self.bucket_width = float(bucket_width)
        self._buckets: Dict[int, _Bucket] = {}
        self._dir_lock = threading.Lock()
        self._retired_contention = 0

    def _bucket(self, b: int) -> _Bucket:
        bucket = self._buckets.get(b)
        if bucket is not None:
            return bucket
        with self._dir_lock:
            bucket = self._buckets.get(b)
            if bucket is None:
                bucket = _Bucket()
                self._buckets[b] = bucket
            return bucket

    def insert(self, record: EventRecord, bucket_id: Optional[int] = None):
        """
        按键序放入事件所在的桶，只持有该桶的互斥字

        Args:
            record: 事件记录
            bucket_id: 指定桶号；默认按时间戳计算
        """
        if record.key.dst != self.owner:
            raise DestinationMismatchError(
                f"事件目的对象 {record.key.dst} 与日历所属对象 {self.owner} 不一致")
        b = bucket_index(record.key.ts, self.bucket_width) if bucket_id is None else bucket_id
        while True:
            bucket = self._bucket(b)
            with bucket.lock:
                if bucket.retired:
                    continue
                bucket.put(record)
                return

    def drain_bucket(self, b: int, key_limit: Optional[EventKey] = None,
                     ts_limit: float = math.inf) -> List[EventRecord]:
        """取出桶 b 中键不大于 key_limit 且时间戳小于 ts_limit 的事件"""
        bucket = self._buckets.get(b)
        if bucket is None:
            return []
        with bucket.lock:
            if bucket.retired:
                return []
            hi = len(bucket.keys)
            if key_limit is not None:
                hi = bisect.bisect_right(bucket.keys, key_limit)
            if math.isfinite(ts_limit):
                hi = min(hi, bisect.bisect_left(bucket.keys, (ts_limit,)))
            out = bucket.records[:hi]
            del bucket.keys[:hi]
            del bucket.records[:hi]
            empty = not bucket.records
        if empty:
            self._retire(b)
        return out

    def peek_bucket(self, b: int) -> List[EventKey]:
        bucket = self._buckets.get(b)
        if bucket is None:
            return []
        with bucket.lock:
            return list(bucket.keys)

    def _window_ids(self, w_start: float, w_end: float) -> List[int]:
        lo = bucket_index(w_start, self.bucket_width)
        hi = bucket_index(w_end, self.bucket_width)
        with self._dir_lock:
            return sorted(b for b in self._buckets if lo <= b <= hi)

    def drain_window(self, w_start: float, w_end: float,
                     key_limit: Optional[EventKey] = None) -> List[EventRecord]:
        """
        取出并返回 [w_start, w_end) 内的全部事件，按键序排列

        Args:
            w_start: 窗口起点 (含)
            w_end: 窗口终点 (不含)
            key_limit: 只取键不大于它的事件 (事件预算截断用)

        Returns:
            有序事件列表
        """
        if not w_start < w_end:
            raise InvalidParameterError(f"窗口必须非空: [{w_start}, {w_end})")
        out: List[EventRecord] = []
        emptied = []
        for b in self._window_ids(w_start, w_end):
            bucket = self._buckets.get(b)
            if bucket is None:
                continue
            with bucket.lock:
                if bucket.retired:
                    continue
                lo = bisect.bisect_left(bucket.keys, (w_start,))
                hi = bisect.bisect_left(bucket.keys, (w_end,))
                if key_limit is not None:
                    hi = min(hi, bisect.bisect_right(bucket.keys, key_limit))
                if hi > lo:
                    out.extend(bucket.records[lo:hi])
                    del bucket.keys[lo:hi]
                    del bucket.records[lo:hi]
                if not bucket.records:
                    emptied.append(b)
        for b in emptied:
            self._retire(b)
        return out

    def _retire(self, b: int):
        with self._dir_lock:
            bucket = self._buckets.get(b)
            if bucket is None:
                return
            with bucket.lock:
                if bucket.records:
                    return
                bucket.retired = True
                self._retired_contention += bucket.lock.contended
                del self._buckets[b]

    def peek_keys(self, w_start: float, w_end: float) -> List[EventKey]:
        """不取出，只列出窗口内事件的键"""
        keys: List[EventKey] = []
        for b in self._window_ids(w_start, w_end):
            bucket = self._buckets.get(b)
            if bucket is None:
                continue
            with bucket.lock:
                lo = bisect.bisect_left(bucket.keys, (w_start,))
                hi = bisect.bisect_left(bucket.keys, (w_end,))
                keys.extend(bucket.keys[lo:hi])
        return keys

    def min_bucket(self) -> Optional[int]:
        """最小的非空桶号"""
        with self._dir_lock:
            ids = sorted(self._buckets)
        for b in ids:
            bucket = self._buckets.get(b)
            if bucket is not None and bucket.records:
                return b
        return None

    def records(self) -> List[EventRecord]:
        """全部未取出的事件，按键序"""
        with self._dir_lock:
            ids = sorted(self._buckets)
        out = []
        for b in ids:
            bucket = self._buckets.get(b)
            if bucket is not None:
                with bucket.lock:
                    out.extend(bucket.records)
        return out

    def __len__(self):
        with self._dir_lock:
            buckets = list(self._buckets.values())
        return sum(len(b.records) for b in buckets)

    def contended_total(self) -> int:
        with self._dir_lock:
            live = sum(b.lock.contended for b in self._buckets.values())
        return live + self._retired_contention


def shared_insert(q: SharedCalendarQueue, ev: EventRecord) -> EventHandle:
    return q.insert(ev)


def shared_fetch_min(q: SharedCalendarQueue) -> Optional[EventHandle]:
    return q.fetch_min()


def mark_invalid(h: EventHandle) -> MarkOutcome:
    """把事件置为 invalidated，返回之前的状态；重复调用是幂等的"""
    return _OUTCOMES[h.record.invalidate()]


def object_insert(c: ObjectCalendar, ev: EventRecord):
    c.insert(ev)


def drain_window(c: ObjectCalendar, w_start: float, w_end: float) -> List[EventRecord]:
    return c.drain_window(w_start, w_end)
