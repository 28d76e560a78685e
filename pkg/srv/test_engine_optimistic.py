"""
乐观引擎的测试: 回滚与湮灭、GVT、化石回收和与顺序引擎的一致性
"""

import pytest

from .conftest import (DESK_BUDGET, desk_model, desk_reference, small_highway, small_pcs,
                       small_phold, two_node_topology)
from .core import EventKey, EventRecord, EventStatus
from .engine_optimistic import OptimisticEngine, run_optimistic
from .engine_sequential import SequentialEngine, run_sequential
from .errors import InvalidParameterError
from .metrics import StopCondition
from .model_contract import Model


class _Cascade(Model):
    """
    两个对象: A 在 2.0 处理 Send 后发 Recv 给 B，B 收到后给自己发 Echo；
    Poke 不产生任何事件，用作人为注入的迟到事件
    """

    name = "cascade"

    def __init__(self):
        super().__init__(2, 0.0, 0)

    def init(self, obj, rng, emit):
        if obj == 0:
            emit(2.0, 0, "Send", None)
        return ()

    def on_event(self, state, event, rng, emit):
        now = event.key.ts
        if event.kind == "Send":
            emit(now + 0.5, 1, "Recv", None)
        elif event.kind == "Recv":
            emit(now + 0.3, 1, "Echo", None)
        return state + (event.kind,)

    def state_bytes(self, state):
        return ",".join(state).encode()


class _Countdown(Model):
    """每个对象依次处理 1.0 .. 5.0 五个事件后结束"""

    name = "countdown"

    def __init__(self, n=3):
        super().__init__(n, 1.0, 0)

    def init(self, obj, rng, emit):
        emit(1.0, obj, "Tick", None)
        return 0

    def on_event(self, state, event, rng, emit):
        if event.key.ts < 5.0:
            emit(event.key.ts + 1.0, event.key.dst, "Tick", None)
        return state + 1

    def state_bytes(self, state):
        return state.to_bytes(8, "little")


def _engine(model, threads=1, stop=None, **options):
    options.setdefault("pin", False)
    return OptimisticEngine(model, threads, two_node_topology(), stop or StopCondition(events=10**6),
                            **options)


def test_single_thread_has_no_rollbacks():
    stop = StopCondition(events=3000)
    seq_metrics, expected = run_sequential(small_phold(lookahead=0.0), stop)
    engine = _engine(small_phold(lookahead=0.0), 1, stop, gvt_period=64)
    metrics, fp = engine.run()
    assert metrics.rollbacks == 0
    assert fp == expected
    assert metrics.committed_events == seq_metrics.committed_events == 3000
    assert metrics.processed_events >= metrics.committed_events


@pytest.mark.parametrize("threads", [2, 4])
@pytest.mark.parametrize("lookahead", [0.0, 0.5])
def test_matches_sequential_on_phold(threads, lookahead):
    stop = StopCondition(events=3001)
    _, expected = run_sequential(small_phold(lookahead=lookahead), stop)
    engine = _engine(small_phold(lookahead=lookahead), threads, stop, gvt_period=64)
    metrics, fp = engine.run()
    assert fp == expected
    assert metrics.committed_events == 3001
    assert metrics.committed_events <= metrics.processed_events
    assert metrics.committed_throughput <= metrics.total_throughput


@pytest.mark.parametrize("seed", range(8))
def test_no_descendant_of_rolled_back_event_is_committed(seed):
    """提交序列与顺序引擎逐事件一致，说明回滚事件的后代都已被湮灭"""
    stop = StopCondition(events=1000)
    model = small_phold(objects=8, seed=seed, lookahead=0.0, population=3, frac_self=0.1)
    seq = SequentialEngine(model, stop, record_trace=True)
    seq.run()
    engine = _engine(small_phold(objects=8, seed=seed, lookahead=0.0, population=3,
                                 frac_self=0.1), 4, stop, gvt_period=32, record_trace=True)
    engine.run()
    assert engine.traces == seq.traces


def test_zero_bind_span_still_correct():
    stop = StopCondition(events=2000)
    _, expected = run_sequential(small_phold(), stop)
    _, fp = _engine(small_phold(), 3, stop, bind_span=0.0, band=0.0, gvt_period=50).run()
    assert fp == expected


@pytest.mark.parametrize("build", [small_pcs, small_highway])
def test_matches_sequential_on_models(build):
    stop = StopCondition(events=2000)
    _, expected = run_sequential(build(), stop)
    metrics, fp = run_optimistic(build(), 2, two_node_topology(), stop, gvt_period=128, pin=False)
    assert fp == expected
    assert metrics.committed_events == 2000


@pytest.mark.bench
@pytest.mark.parametrize("threads", [1, 2, 4, 8])
@pytest.mark.parametrize("name", ["pcs", "highway"])
def test_desk_scale_matches_sequential(name, threads):
    seq_metrics, expected = desk_reference(name)
    metrics, fp = _engine(desk_model(name), threads, StopCondition(events=DESK_BUDGET)).run()
    assert fp == expected
    assert metrics.committed_events == seq_metrics.committed_events == DESK_BUDGET
    if threads == 1:
        assert metrics.rollbacks == 0


def test_horizon_matches_sequential():
    stop = StopCondition(end_time=6.5)
    seq_metrics, expected = run_sequential(small_phold(), stop)
    metrics, fp = _engine(small_phold(), 2, stop, gvt_period=64).run()
    assert fp == expected
    assert metrics.committed_events == seq_metrics.committed_events


def test_gvt_is_monotone():
    engine = _engine(small_phold(lookahead=0.0), 4, StopCondition(events=4000), gvt_period=32)
    engine.run()
    values = engine.gvt.values
    assert engine.gvt.rounds == len(values) > 0
    assert values == sorted(values)
    assert engine.metrics.extras["final_gvt"] >= values[-1]


def test_quiescent_gvt_is_last_processed_timestamp():
    engine = _engine(_Countdown(), 1)
    engine.initialize()
    while engine.step():
        pass
    assert engine.compute_gvt() == 5.0
    assert engine.compute_gvt() == 5.0


def test_quiescent_run_commits_everything():
    metrics, fp = _engine(_Countdown(), 2, gvt_period=4).run()
    _, expected = run_sequential(_Countdown(), StopCondition(events=10**6))
    assert metrics.committed_events == 15
    assert fp == expected


def test_rollback_annihilates_cascade():
    engine = _engine(_Cascade(), 1)
    engine.initialize()
    assert engine.step() == 1
    assert engine.step() == 1
    assert engine.step() == 1
    assert engine.step() == 0
    a, b = engine.slots
    send = a.history[0].record
    recv, echo = (entry.record for entry in b.history)
    assert [e.record.kind for e in b.history] == ["Recv", "Echo"]

    engine.queue.insert(EventRecord(EventKey(1.5, 0, 1, 99), "Poke"))
    assert engine.step() == 1
    assert [e.record.kind for e in a.history] == ["Poke"]
    assert b.history == []
    assert send.status is EventStatus.PENDING
    assert recv.status is EventStatus.INVALIDATED
    assert echo.status is EventStatus.INVALIDATED
    assert b.state == ()
    assert sum(engine._rollbacks) == 2
    assert sum(engine._undone) == 3

    while engine.step():
        pass
    assert [e.record.kind for e in a.history] == ["Poke", "Send"]
    assert [e.record.kind for e in b.history] == ["Recv", "Echo"]
    for slot in engine.slots:
        assert all(e.record.status is EventStatus.PROCESSED for e in slot.history)
    assert b.state == ("Recv", "Echo")


def test_rollback_of_unprocessed_future_is_noop():
    engine = _engine(small_phold(objects=4), 1)
    engine.initialize()
    for _ in range(20):
        engine.step()
    last = max(e.key.ts for s in engine.slots for e in s.history)
    assert engine.rollback(0, last + 100.0) == 0


def test_rollback_refuses_bound_object():
    engine = _engine(small_phold(objects=4), 1)
    engine.initialize()
    engine.slots[2].bind.store(5)
    with pytest.raises(InvalidParameterError):
        engine.rollback(2, 0.0)


def test_rollback_after_fossil_collection_restores_sequential_state():
    """
    化石回收到 g 之后仍能回滚到 g，回滚后的状态和待处理事件与顺序引擎在 g 处的一致
    """
    model = small_phold(objects=4, lookahead=0.0)
    engine = _engine(model, 1, checkpoint_interval=4)
    engine.initialize()
    for _ in range(300):
        assert engine.step() == 1
    keys = sorted(e.key for s in engine.slots for e in s.history)
    g = keys[150].ts
    engine.fossil_collect(g)
    assert all(s.checkpoints[0].at <= g for s in engine.slots)
    for obj in range(model.n_objects):
        engine.rollback(obj, g)

    seq = SequentialEngine(small_phold(objects=4, lookahead=0.0), StopCondition(end_time=g))
    seq.run()
    assert sorted(r.key for r in engine.queue.pending_records()) == [r.key for r in seq.pending()]
    for slot, state in zip(engine.slots, seq.states):
        assert model.state_bytes(slot.state) == model.state_bytes(state)
        assert all(e.key.ts < g for e in slot.history)

    # 回滚之后继续推进，结果仍与顺序引擎一致
    for _ in range(100):
        engine.step()
    g2 = engine.compute_gvt()
    engine.fossil_collect(g2)
    assert engine.queue.committed_total > 0


def test_committed_never_exceeds_processed_under_wall_clock():
    engine = _engine(small_phold(lookahead=0.0), 4,
                     StopCondition(wall_seconds=0.5, warmup_fraction=0.1), gvt_period=64)
    metrics, _ = engine.run()
    assert 0 < metrics.committed_events <= metrics.processed_events
    assert metrics.committed_throughput <= metrics.total_throughput


def test_rollbacks_before_warmup_stay_out_of_measured_throughput():
    """
    预热前发生的处理与回滚只进入基线: 预热后重新处理并提交的事件同时计入两种吞吐量，
    预热前处理且最终提交的事件只进入提交基线
    """
    engine = _engine(_Cascade(), 1, StopCondition(wall_seconds=60.0))
    engine.initialize()
    while engine.step():
        pass
    engine.queue.insert(EventRecord(EventKey(1.5, 0, 1, 99), "Poke"))
    assert engine.step() == 1
    assert sum(engine._processed) == 4
    assert sum(engine._undone) == 3

    engine.begin_measurement(1.0)
    while engine.step():
        pass
    assert sum(engine._processed) == 7

    engine._finish_metrics(engine._materialize())
    metrics = engine.metrics
    metrics.wall_seconds = 4.0
    assert metrics.committed_events == 4
    assert metrics.warmup_processed == 4
    # 只有 Poke 在预热前处理并最终提交
    assert metrics.warmup_committed == 1
    assert metrics.committed_throughput == pytest.approx(1.0)
    assert metrics.total_throughput == pytest.approx(1.0)
    metrics.check()


def test_measurement_without_warmup_uses_zero_baselines():
    metrics, _ = _engine(_Cascade(), 1).run()
    assert metrics.warmup_committed == 0
    assert metrics.warmup_processed == 0
    assert metrics.committed_events == 3
