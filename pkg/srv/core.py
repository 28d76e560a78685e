"""
核心领域类型
虚拟时间、事件键与全序、事件记录状态字、按对象划分的确定性随机流、状态指纹
"""

import hashlib
import math
import struct
import threading
from enum import IntEnum
from typing import Any, Dict, Iterable, NamedTuple, Optional

import numpy as np

from .errors import InvalidParameterError, InvalidTimeError

ObjectId = int

_KEY_STRUCT = struct.Struct("<dqqq")
_MASK64 = (1 << 64) - 1


def virtual_time(value: float) -> float:
    """
    构造虚拟时间 (64 位浮点)

    Args:
        value: 时间值，必须有限且非负

    Returns:
        校验后的浮点时间
    """
    ts = float(value)
    if math.isnan(ts) or math.isinf(ts) or ts < 0.0:
        raise InvalidTimeError(f"非法虚拟时间: {value!r}")
    return ts


class EventKey(NamedTuple):
    """事件键，按 (ts, dst, src, seq) 字典序全序"""
    ts: float
    dst: ObjectId
    src: ObjectId
    seq: int

    def to_bytes(self) -> bytes:
        return _KEY_STRUCT.pack(self.ts, self.dst, self.src, self.seq)


class Ordering(IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def event_key_cmp(a: EventKey, b: EventKey) -> Ordering:
    """按 (ts, dst, src, seq) 字典序比较两个事件键"""
    if a < b:
        return Ordering.LESS
    if a > b:
        return Ordering.GREATER
    return Ordering.EQUAL


class EventStatus(IntEnum):
    PENDING = 0
    IN_PROCESSING = 1
    PROCESSED = 2
    INVALIDATED = 3


# processed -> pending 只在回滚重新挂起事件时使用
_ALLOWED = {
    (EventStatus.PENDING, EventStatus.IN_PROCESSING),
    (EventStatus.PENDING, EventStatus.INVALIDATED),
    (EventStatus.IN_PROCESSING, EventStatus.PROCESSED),
    (EventStatus.IN_PROCESSING, EventStatus.INVALIDATED),
    (EventStatus.PROCESSED, EventStatus.PENDING),
}


class EventRecord:
    """
    发往单个仿真对象的带时间戳消息
    状态字只能通过原子 RMW 修改
    """

    __slots__ = ("key", "kind", "payload", "_status", "_lock", "collected")

    def __init__(self, key: EventKey, kind: str, payload: Any = None):
        virtual_time(key.ts)
        self.key = key
        self.kind = kind
        self.payload = payload
        self._status = EventStatus.PENDING
        self._lock = threading.Lock()
        self.collected = False

    @property
    def status(self) -> EventStatus:
        return self._status

    def transition(self, expected: EventStatus, new: EventStatus) -> bool:
        """CAS 状态字: 当前为 expected 时改为 new"""
        if (expected, new) not in _ALLOWED:
            raise ValueError(f"不允许的状态迁移: {expected.name} -> {new.name}")
        with self._lock:
            if self._status is not expected:
                return False
            self._status = new
            return True

    def invalidate(self) -> EventStatus:
        """把状态置为 invalidated，返回原状态 (幂等)"""
        with self._lock:
            prior = self._status
            self._status = EventStatus.INVALIDATED
            return prior

    def __repr__(self):
        k = self.key
        return (f"EventRecord(ts={k.ts:.6f}, dst={k.dst}, src={k.src}, "
                f"seq={k.seq}, kind={self.kind}, status={self._status.name})")


class RngStream:
    """
    按对象划分的确定性随机流
    算法: numpy PCG64，种子由 SeedSequence(global_seed, spawn_key=(object_index,)) 混合，
    因此同一 (global_seed, object_index) 的抽样序列与线程数和调度无关
    """

    __slots__ = ("global_seed", "object_index", "_bitgen", "_gen")

    def __init__(self, global_seed: int, object_index: int):
        self.global_seed = int(global_seed)
        self.object_index = int(object_index)
        seq = np.random.SeedSequence(entropy=self.global_seed,
                                     spawn_key=(self.object_index,))
        self._bitgen = np.random.PCG64(seq)
        self._gen = np.random.Generator(self._bitgen)

    def exponential(self, mean: float) -> float:
        return float(self._gen.exponential(mean))

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return float(self._gen.uniform(low, high))

    def integers(self, high: int) -> int:
        """[0, high) 上的均匀整数"""
        return int(self._gen.integers(high))

    def poisson(self, lam: float) -> int:
        return int(self._gen.poisson(lam))

    def lognormal(self, sigma: float) -> float:
        return float(self._gen.lognormal(0.0, sigma))

    def get_state(self) -> Dict:
        return self._bitgen.state

    def set_state(self, state: Dict):
        self._bitgen.state = state


def draw_exponential(stream: RngStream, mean: float) -> float:
    """
    从 Exp(1/mean) 抽样并推进随机流

    Args:
        stream: 对象随机流
        mean: 均值，必须为正

    Returns:
        非负虚拟时间间隔
    """
    if not mean > 0.0:
        raise InvalidParameterError(f"指数分布均值必须为正: {mean!r}")
    return stream.exponential(mean)


class Fingerprint(NamedTuple):
    """64 位状态摘要"""
    digest: int

    def hex(self) -> str:
        return f"{self.digest:016x}"


def _hash64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def fingerprint_object(state_bytes: bytes) -> Fingerprint:
    """单个对象状态的确定性 64 位摘要"""
    return Fingerprint(_hash64(bytes(state_bytes)))


def combine(a: Fingerprint, b: Fingerprint) -> Fingerprint:
    """模 2^64 加法合并，满足交换律和结合律"""
    return Fingerprint((a.digest + b.digest) & _MASK64)


def combine_all(prints: Iterable[Fingerprint]) -> Fingerprint:
    total = Fingerprint(0)
    for fp in prints:
        total = combine(total, fp)
    return total


def chain_key(digest: int, key: EventKey) -> int:
    """把一个已提交事件键串接进对象的提交序列摘要 (与顺序相关)"""
    return _hash64(digest.to_bytes(8, "little") + key.to_bytes())


def object_fingerprint(state_bytes: bytes, trace_digest: int) -> Fingerprint:
    """对象最终指纹 = H(状态字节 || 提交序列摘要)"""
    return fingerprint_object(bytes(state_bytes) + trace_digest.to_bytes(8, "little"))


def first_divergence(expected: Dict[int, list], actual: Dict[int, list]) -> Optional[EventKey]:
    """
    比较两份按对象记录的提交序列，返回最早 (键最小) 的分歧键

    Returns:
        分歧处的事件键；完全一致时返回 None
    """
    candidates = []
    for obj in set(expected) | set(actual):
        exp_seq = expected.get(obj, [])
        act_seq = actual.get(obj, [])
        for i in range(max(len(exp_seq), len(act_seq))):
            a = exp_seq[i] if i < len(exp_seq) else None
            b = act_seq[i] if i < len(act_seq) else None
            if a != b:
                candidates.append(min(k for k in (a, b) if k is not None))
                break
    return min(candidates) if candidates else None


def model_fingerprint(model, states, digests) -> Fingerprint:
    """
    全部对象的合并指纹

    Args:
        model: 提供 state_bytes 的模型
        states: 按对象编号排列的状态
        digests: 按对象编号排列的提交序列摘要

    Returns:
        合并后的 64 位指纹
    """
    return combine_all(object_fingerprint(model.state_bytes(s), d)
                       for s, d in zip(states, digests))
