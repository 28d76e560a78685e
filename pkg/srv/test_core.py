"""
核心类型、原子原语与运行指标的测试
"""

import math
import threading
import time

import pytest

from .atomics import AtomicCounter, AtomicWord, BucketLock
from .core import (EventKey, EventRecord, EventStatus, Fingerprint, Ordering, RngStream,
                   chain_key, combine, combine_all, draw_exponential, event_key_cmp,
                   first_divergence, fingerprint_object, virtual_time)
from .errors import InvalidParameterError, InvalidTimeError
from .metrics import RunMetrics, StopCondition


@pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf, -math.inf])
def test_virtual_time_rejects_invalid(bad):
    with pytest.raises(InvalidTimeError):
        virtual_time(bad)


def test_virtual_time_accepts_zero():
    assert virtual_time(0) == 0.0


def test_event_key_total_order():
    """时间戳相同时依次按 dst、src、seq 比较"""
    a = EventKey(1.0, 2, 0, 0)
    assert event_key_cmp(a, EventKey(1.0, 3, 0, 0)) is Ordering.LESS
    assert event_key_cmp(a, EventKey(1.0, 2, 1, 0)) is Ordering.LESS
    assert event_key_cmp(a, EventKey(1.0, 2, 0, 1)) is Ordering.LESS
    assert event_key_cmp(EventKey(0.5, 9, 9, 9), a) is Ordering.LESS
    assert event_key_cmp(a, EventKey(1.0, 2, 0, 0)) is Ordering.EQUAL
    assert event_key_cmp(EventKey(2.0, 0, 0, 0), a) is Ordering.GREATER


def test_event_record_status_transitions():
    record = EventRecord(EventKey(1.0, 0, 0, 0), "Ping")
    assert record.status is EventStatus.PENDING
    assert record.transition(EventStatus.PENDING, EventStatus.IN_PROCESSING)
    # 第二次 CAS 期望值已过期
    assert not record.transition(EventStatus.PENDING, EventStatus.IN_PROCESSING)
    assert record.transition(EventStatus.IN_PROCESSING, EventStatus.PROCESSED)
    assert record.transition(EventStatus.PROCESSED, EventStatus.PENDING)
    with pytest.raises(ValueError):
        record.transition(EventStatus.PENDING, EventStatus.PROCESSED)


def test_invalidate_is_idempotent():
    record = EventRecord(EventKey(1.0, 0, 0, 0), "Ping")
    assert record.invalidate() is EventStatus.PENDING
    assert record.invalidate() is EventStatus.INVALIDATED
    assert not record.transition(EventStatus.PENDING, EventStatus.IN_PROCESSING)


def test_event_record_rejects_bad_timestamp():
    with pytest.raises(InvalidTimeError):
        EventRecord(EventKey(-0.5, 0, 0, 0), "Ping")


def test_rng_stream_is_per_object_deterministic():
    a = RngStream(42, 3)
    b = RngStream(42, 3)
    c = RngStream(42, 4)
    draws_a = [a.exponential(1.0) for _ in range(20)]
    assert draws_a == [b.exponential(1.0) for _ in range(20)]
    assert draws_a != [c.exponential(1.0) for _ in range(20)]


def test_rng_state_roundtrip_replays_draws():
    rng = RngStream(1, 0)
    rng.uniform()
    state = rng.get_state()
    first = [rng.uniform() for _ in range(5)]
    rng.set_state(state)
    assert [rng.uniform() for _ in range(5)] == first


@pytest.mark.parametrize("mean", [0.0, -1.0])
def test_draw_exponential_rejects_non_positive_mean(mean):
    with pytest.raises(InvalidParameterError):
        draw_exponential(RngStream(0, 0), mean)


def test_draw_exponential_mean():
    rng = RngStream(5, 0)
    draws = [draw_exponential(rng, 2.0) for _ in range(20000)]
    assert all(d >= 0 for d in draws)
    assert sum(draws) / len(draws) == pytest.approx(2.0, rel=0.05)


def test_combine_is_order_independent():
    prints = [fingerprint_object(bytes([i])) for i in range(10)]
    assert combine_all(prints) == combine_all(reversed(prints))
    assert combine(prints[0], prints[1]) == combine(prints[1], prints[0])
    big = Fingerprint((1 << 64) - 1)
    assert combine(big, Fingerprint(2)).digest == 1


def test_single_byte_flip_changes_fingerprint():
    state = bytes(range(256)) * 8
    base = fingerprint_object(state)
    for pos in (0, 1, 777, len(state) - 1):
        for bit in (0x01, 0x80):
            flipped = bytearray(state)
            flipped[pos] ^= bit
            assert fingerprint_object(bytes(flipped)) != base
    assert fingerprint_object(state) == base


def test_chain_key_depends_on_order():
    k1, k2 = EventKey(1.0, 0, 0, 0), EventKey(2.0, 0, 0, 1)
    assert chain_key(chain_key(0, k1), k2) != chain_key(chain_key(0, k2), k1)


def test_first_divergence():
    k = [EventKey(float(i), 0, 0, i) for i in range(5)]
    expected = {0: k[:3], 1: [EventKey(0.5, 1, 0, 0)]}
    assert first_divergence(expected, {0: k[:3], 1: [EventKey(0.5, 1, 0, 0)]}) is None
    actual = {0: [k[0], k[2], k[1]], 1: [EventKey(0.5, 1, 0, 0)]}
    assert first_divergence(expected, actual) == k[1]
    # 一方提前结束时，缺失位置上的键就是分歧点
    assert first_divergence(expected, {0: k[:2], 1: [EventKey(0.5, 1, 0, 0)]}) == k[2]


def test_atomic_word_cas_and_fetch_min():
    word = AtomicWord(None)
    assert word.fetch_min(5) is None
    assert word.fetch_min(7) == 5
    assert word.load() == 5
    assert not word.compare_and_swap(4, 1)
    assert word.compare_and_swap(5, 1)
    assert word.swap(None) == 1


def test_atomic_counter_under_threads():
    counter = AtomicCounter()
    seen = []
    lock = threading.Lock()

    def worker():
        mine = [counter.fetch_add(1) for _ in range(1000)]
        with lock:
            seen.extend(mine)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counter.load() == 8000
    assert sorted(seen) == list(range(8000))


def test_bucket_lock_counts_contention():
    lock = BucketLock()
    holder = threading.Event()
    release = threading.Event()

    def hold():
        with lock:
            holder.set()
            release.wait(5)

    t = threading.Thread(target=hold)
    t.start()
    holder.wait(5)
    waiter = threading.Thread(target=lambda: lock.__enter__() and lock.__exit__(None, None, None))
    waiter.start()
    # 等等待方撞上已持有的锁
    time.sleep(0.2)
    assert lock.contended == 0
    release.set()
    t.join()
    waiter.join()
    assert lock.contended == 1


def test_stop_condition_validation():
    with pytest.raises(InvalidParameterError):
        StopCondition()
    with pytest.raises(InvalidParameterError):
        StopCondition(events=0)
    with pytest.raises(InvalidParameterError):
        StopCondition(wall_seconds=1.0, warmup_fraction=1.0)
    stop = StopCondition(events=10)
    assert stop.event_budget == 10
    assert stop.horizon == math.inf


def test_run_metrics_throughput_uses_warmup_baseline():
    m = RunMetrics(committed_events=1100, processed_events=1500, wall_seconds=11.0)
    m.mark_warmup(100, 1.0)
    assert m.committed_throughput == pytest.approx(100.0)
    assert m.total_throughput == pytest.approx(140.0)
    assert m.committed_throughput <= m.total_throughput
    m.check()


def test_run_metrics_separate_processed_baseline():
    """预热前有回滚时，处理基线高于提交基线"""
    m = RunMetrics(committed_events=1100, processed_events=1500, wall_seconds=11.0)
    m.mark_warmup(100, 1.0, processed=400)
    assert m.warmup_committed == 100
    assert m.warmup_processed == 400
    assert m.committed_throughput == pytest.approx(100.0)
    assert m.total_throughput == pytest.approx(110.0)
    m.check()
    m.warmup_processed = 600
    with pytest.raises(AssertionError):
        m.check()


def test_run_metrics_check_flags_overcommit():
    with pytest.raises(AssertionError):
        RunMetrics(committed_events=5, processed_events=4).check()
