"""
PCS、高速公路与 PHOLD 模型的测试
"""

import numpy as np
import pytest

from .conftest import small_highway
from .core import EventKey, EventRecord, RngStream, model_fingerprint
from .engine_sequential import SequentialEngine, run_sequential
from .errors import ConfigError
from .highway_model import (HighwayZone, _CarNode, capacity_ref, effective_speed, highway_build,
                            in_flight_cars, total_cars)
from .metrics import StopCondition
from .model_contract import WorkloadConfig, build_model
from .pcs_model import (FULL_CHANNELS, LOAD_TARGETS, PcsCell, PowerParams, blocked_calls,
                        compute_power, hex_neighbors, mean_busy, pcs_build)
from .phold_model import PholdModel, phold_build


# ---- PCS -------------------------------------------------------------------

def test_hex_neighbors():
    assert len(hex_neighbors(2, 2, 5)) == 6
    assert sorted(hex_neighbors(0, 0, 5)) == [1, 5]
    assert all(0 <= n < 25 for r in range(5) for c in range(5) for n in hex_neighbors(r, c, 5))


def test_compute_power():
    params = PowerParams()
    cell = PcsCell(0, 0, 0, 8)
    assert compute_power(cell, params) == params.p_min
    cell.busy[:3] = True
    cell.power[:3] = 0.5
    cell.dist[:3] = 0.2
    loaded = compute_power(cell, params)
    assert params.p_min < loaded <= params.p_max
    cell.power[:3] = 1e6
    assert compute_power(cell, params) == params.p_max


def test_pcs_targets_scale_with_channels():
    light = pcs_build(WorkloadConfig("pcs", "light", params={"cells": 16, "channels": 500}))
    heavy = pcs_build(WorkloadConfig("pcs", "heavy", params={"cells": 16, "channels": 500}))
    assert light.n_objects == 16
    assert light.target == pytest.approx(LOAD_TARGETS["light"] / 10)
    assert heavy.target == pytest.approx(10 * light.target)
    scaled = pcs_build(WorkloadConfig("pcs", "light", scale=1 / 16))
    assert scaled.n_objects == 256
    assert scaled.channels == FULL_CHANNELS


def test_pcs_rejects_unbalanced():
    with pytest.raises(ConfigError):
        WorkloadConfig("pcs", "light", "unbalanced")


@pytest.mark.parametrize("load,cells,horizon", [
    ("light", 64, 40.0),
    ("medium", 16, 40.0),
    ("heavy", 9, 30.0),
])
def test_pcs_mean_busy_follows_littles_law(load, cells, horizon):
    """时间平均忙信道数 ≈ 到达率 × 平均通话时长"""
    model = build_model(WorkloadConfig("pcs", load, seed=3,
                                       params={"cells": cells, "channels": 512}))
    engine = SequentialEngine(model, StopCondition(end_time=horizon))
    engine.run()
    assert blocked_calls(engine.states) == 0
    assert mean_busy(engine.states, horizon) == pytest.approx(model.target, rel=0.05)


def test_pcs_arrival_rate_holds_when_gaps_are_below_lookahead():
    """完整信道数下平均到达间隔远小于前瞻，到达数仍等于 λ × 时长"""
    model = build_model(WorkloadConfig("pcs", "heavy", seed=5,
                                       params={"cells": 1, "channels": FULL_CHANNELS}))
    assert 1.0 / model.arrival_rate < model.lookahead / 5
    horizon = 10.0
    engine = SequentialEngine(model, StopCondition(end_time=horizon))
    engine.run()
    cell = engine.states[0]
    assert cell.arrivals == pytest.approx(model.arrival_rate * horizon, rel=0.05)
    assert cell.blocked == 0


def test_pcs_one_flipped_byte_changes_run_fingerprint():
    model = build_model(WorkloadConfig("pcs", "medium", seed=2, params={"cells": 4, "channels": 64}))
    engine = SequentialEngine(model, StopCondition(events=500))
    engine.run()
    base = model_fingerprint(model, engine.states, engine.digests)
    cell = engine.states[1]
    # dist 取值在 [0, 1)，翻转最低字节只改动尾数
    raw = bytearray(cell.dist.tobytes())
    raw[0] ^= 0x01
    cell.dist[:] = np.frombuffer(bytes(raw), dtype=np.float64)
    assert model_fingerprint(model, engine.states, engine.digests) != base


@pytest.mark.bench
def test_pcs_event_grain_grows_with_load():
    """满信道数下每个事件的平均处理时间随负载严格增加"""
    def per_event(load):
        costs = []
        for seed in range(3):
            model = build_model(WorkloadConfig("pcs", load, seed=seed,
                                               params={"cells": 4, "channels": FULL_CHANNELS}))
            metrics, _ = run_sequential(model, StopCondition(events=20000))
            costs.append(metrics.wall_seconds / metrics.committed_events)
        return min(costs)

    light, medium, heavy = (per_event(load) for load in ("light", "medium", "heavy"))
    assert light < medium < heavy


def test_pcs_copy_state_is_independent():
    model = build_model(WorkloadConfig("pcs", "medium", params={"cells": 4, "channels": 64}))
    cell = model.init(0, RngStream(1, 0), lambda *args: None)
    snapshot = model.copy_state(cell)
    cell.busy[:] = True
    assert model.state_bytes(snapshot) != model.state_bytes(cell)
    assert not np.all(snapshot.busy)


# ---- 高速公路 ---------------------------------------------------------------

def test_capacity_and_speed():
    assert capacity_ref() == pytest.approx(41.538, rel=1e-3)
    assert effective_speed(130.0, 0.5) == 130.0
    assert effective_speed(120.0, 2.0) == pytest.approx(60.0)


def test_zone_linked_list():
    zone = HighwayZone(3)
    ids = [zone.new_car_id() for _ in range(3)]
    for car_id in ids:
        zone.append(_CarNode(car_id, 130.0, 0.0))
    zone.unlink(ids[1])
    assert [n.car_id for n in zone.cars()] == [ids[0], ids[2]]
    zone.unlink(ids[2])
    assert zone.tail.car_id == ids[0]
    assert zone.car_count == 1


def test_highway_lookahead_is_fastest_crossing():
    model = small_highway()
    assert model.lookahead == pytest.approx(model.jitter_lo / 130.0)
    assert model.jitter_lo == pytest.approx(np.exp(-0.15))


def _arrive(model, zone, now, payload):
    emitted = []
    event = EventRecord(EventKey(now, zone.zone_id, 0, 0), "CarArrive", payload)
    model.on_event(zone, event, RngStream(1, zone.zone_id), lambda *args: emitted.append(args))
    return emitted


def test_car_departs_after_free_flow_crossing():
    model = small_highway()
    zone = HighwayZone(3)
    emitted = _arrive(model, zone, 1.0, (77, 130.0))
    assert zone.car_count == 1
    [(ts, dst, kind, payload)] = emitted
    assert (dst, kind, payload) == (3, "CarDepart", 77)
    assert model.jitter_lo / 130.0 <= ts - 1.0 <= model.jitter_hi / 130.0
    assert ts >= 1.0 + model.lookahead


def test_car_crosses_to_next_zone_one_lookahead_later():
    model = small_highway(zones=4)
    zone = HighwayZone(3)
    _arrive(model, zone, 1.0, (77, 120.0))
    emitted = []
    event = EventRecord(EventKey(1.5, 3, 3, 1), "CarDepart", 77)
    model.on_event(zone, event, RngStream(1, 3), lambda *args: emitted.append(args))
    assert zone.car_count == 0
    assert emitted == [(1.5 + model.lookahead, 0, "CarArrive", (77, 120.0))]


def test_crowded_zone_slows_crossing():
    model = small_highway()
    zone = HighwayZone(0)
    for i in range(int(2 * model.capacity)):
        zone.append(_CarNode(i, 110.0, 0.0))
    [(ts, _, _, _)] = _arrive(model, zone, 0.0, (999, 130.0))
    ratio = zone.car_count / model.capacity
    assert ts >= model.jitter_lo * ratio / 130.0 * (1 - 1e-12)


@pytest.mark.parametrize("balance", ["balanced", "unbalanced"])
def test_closed_highway_conserves_cars(balance):
    initial_engine = SequentialEngine(small_highway(balance=balance), StopCondition(events=1))
    initial_engine.initialize()
    initial = total_cars(initial_engine.states) + in_flight_cars(initial_engine.pending())
    assert in_flight_cars(initial_engine.pending()) > 0
    engine = SequentialEngine(small_highway(balance=balance), StopCondition(end_time=0.05))
    engine.run()
    assert total_cars(engine.states) + in_flight_cars(engine.pending()) == initial
    assert sum(z.departures for z in engine.states) > initial


@pytest.mark.parametrize("load", ["medium", "heavy"])
def test_closed_highway_density_stays_near_configured(load):
    model = small_highway(load=load, seed=9, zones=48)
    target = model.ratios[0] * model.capacity
    engine = SequentialEngine(model, StopCondition(end_time=0.05))
    engine.run()
    density = total_cars(engine.states) / model.n_objects
    assert density == pytest.approx(target, rel=0.10)


def test_open_highway_injection_rate():
    model = small_highway(zones=4, layout="open", entry_zones=[0], exit_zones=[])
    horizon = 1.0
    engine = SequentialEngine(model, StopCondition(end_time=horizon))
    engine.run()
    assert engine.states[0].injected == pytest.approx(horizon / model.injection_mean, rel=0.10)


def test_unbalanced_halves_second_half_density():
    model = highway_build(WorkloadConfig("highway", "medium", "unbalanced", params={"zones": 10}))
    assert model.ratios[:5] == [1.0] * 5
    assert model.ratios[5:] == [0.5] * 5


def test_open_highway_injects_and_exits():
    model = small_highway(layout="open", entry_zones=[0], exit_zones=[4, 8])
    engine = SequentialEngine(model, StopCondition(end_time=0.1))
    engine.run()
    zones = engine.states
    assert zones[0].injected > 0
    assert sum(z.exited for z in zones) > 0
    assert zones[-1].exited > 0


def test_highway_rejects_tiny_road():
    with pytest.raises(ConfigError):
        highway_build(WorkloadConfig("highway", "light", params={"zones": 1}))


# ---- PHOLD -----------------------------------------------------------------

def test_phold_parameters():
    assert phold_build(WorkloadConfig("phold", "heavy", params={"objects": 8})).population == 16
    with pytest.raises(ConfigError):
        PholdModel(4, 0, lookahead=-1.0)
    with pytest.raises(ConfigError):
        PholdModel(0, 0)


def test_workload_config_validation():
    with pytest.raises(ConfigError):
        WorkloadConfig("airport")
    with pytest.raises(ConfigError):
        WorkloadConfig("pcs", "extreme")
    with pytest.raises(ConfigError):
        WorkloadConfig("pcs", scale=0.0)
    with pytest.raises(ConfigError):
        WorkloadConfig("pcs", scale=1.5)
