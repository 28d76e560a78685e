"""
高速公路模型
每公里一个仿真对象，区段内的车辆用链表保存；车辆进入区段时遍历整条链表判断超车，
通行时间取决于车型与区段密度
"""

import math
import struct
from typing import Iterable, List, Optional

from .core import EventRecord, ObjectId, RngStream, draw_exponential
from .errors import ConfigError, ConsistencyError
from .model_contract import Emit, Model, WorkloadConfig

FULL_ZONES = 3000
DESK_ZONES = 256
SPEED_CLASSES = (130.0, 120.0, 110.0)
LOAD_RATIOS = {"light": 0.25, "medium": 1.0, "heavy": 1.5}
UNBALANCED_FACTOR = 0.5

_ZONE_HEADER = struct.Struct("<qqqqqqq")
_CAR = struct.Struct("<qdd")
_CAR_ID_SHIFT = 32


def capacity_ref(lanes: int = 3, speed_limit: float = 130.0, safe_gap_s: float = 2.0) -> float:
    """限速下按安全车距 (秒) 计算的每公里车辆上限，乘以车道数"""
    return lanes * 3600.0 / (speed_limit * safe_gap_s)


def effective_speed(v_class: float, ratio: float) -> float:
    """
    密度修正后的车速

    Args:
        v_class: 车型巡航速度 (km/h)
        ratio: 区段车辆数与 capacity_ref 之比

    Returns:
        有效车速 (km/h)
    """
    if ratio <= 1.0:
        return v_class
    return v_class / ratio


class _CarNode:
    __slots__ = ("car_id", "vclass", "entry_ts", "next")

    def __init__(self, car_id: int, vclass: float, entry_ts: float):
        self.car_id = car_id
        self.vclass = vclass
        self.entry_ts = entry_ts
        self.next: Optional["_CarNode"] = None


class HighwayZone:
    """一公里区段的状态，车辆按进入顺序串成单链表"""

    __slots__ = ("zone_id", "head", "tail", "car_count", "surpasses",
                 "arrivals", "departures", "exited", "injected", "next_car")

    def __init__(self, zone_id: int):
        self.zone_id = zone_id
        self.head: Optional[_CarNode] = None
        self.tail: Optional[_CarNode] = None
        self.car_count = 0
        self.surpasses = 0
        self.arrivals = 0
        self.departures = 0
        self.exited = 0
        self.injected = 0
        self.next_car = 0

    def append(self, node: _CarNode):
        if self.tail is None:
            self.head = node
        else:
            self.tail.next = node
        self.tail = node
        self.car_count += 1

    def unlink(self, car_id: int) -> _CarNode:
        prev, node = None, self.head
        while node is not None:
            if node.car_id == car_id:
                if prev is None:
                    self.head = node.next
                else:
                    prev.next = node.next
                if self.tail is node:
                    self.tail = prev
                node.next = None
                self.car_count -= 1
                return node
            prev, node = node, node.next
        raise ConsistencyError(f"区段 {self.zone_id} 中没有车辆 {car_id}")

    def cars(self) -> List[_CarNode]:
        out, node = [], self.head
        while node is not None:
            out.append(node)
            node = node.next
        return out

    def new_car_id(self) -> int:
        car_id = (self.zone_id << _CAR_ID_SHIFT) | self.next_car
        self.next_car += 1
        return car_id


class HighwayModel(Model):
    """
    高速公路模型

    Args:
        ratios: 每个区段的初始密度比
        seed: 全局随机种子
        layout: closed (环形，无出入口) 或 open (直线，带出入口)
        entry_zones: open 布局下的入口区段
        exit_zones: open 布局下的出口区段，最后一个区段总是出口
        exit_prob: 出口区段的驶离概率
        lanes: 单向车道数
        speed_limit: 限速 (km/h)
        safe_gap_s: 安全车距 (秒)
        jitter_sigma: 通行时间对数正态扰动的 sigma
    """

    name = "highway"

    def __init__(self, ratios: List[float], seed: int, layout: str = "closed",
                 entry_zones: Iterable[int] = (0,), exit_zones: Iterable[int] = (),
                 exit_prob: float = 0.1, lanes: int = 3, speed_limit: float = 130.0,
                 safe_gap_s: float = 2.0, jitter_sigma: float = 0.05):
        if layout not in ("closed", "open"):
            raise ConfigError(f"未知布局: {layout}")
        self.ratios = list(ratios)
        self.layout = layout
        self.capacity = capacity_ref(lanes, speed_limit, safe_gap_s)
        self.speed_limit = speed_limit
        self.jitter_sigma = jitter_sigma
        # 扰动截断在 ±3σ，通行时间因此有正的下界
        self.jitter_lo = math.exp(-3.0 * jitter_sigma)
        self.jitter_hi = math.exp(3.0 * jitter_sigma)
        # 最快车型在未超容量、最小扰动下通过一公里的时间
        lookahead = self.jitter_lo / max(SPEED_CLASSES)
        super().__init__(len(self.ratios), lookahead, seed)
        n = len(self.ratios)
        if layout == "open":
            self.entries = {z for z in entry_zones if 0 <= z < n}
            self.exits = {z for z in exit_zones if 0 <= z < n} | {n - 1}
        else:
            self.entries, self.exits = set(), set()
        self.exit_prob = exit_prob
        flow = max(self.ratios[0], 1e-9) * self.capacity * speed_limit
        self.injection_mean = 1.0 / flow

    def _traversal(self, zone: HighwayZone, vclass: float, rng: RngStream) -> float:
        ratio = zone.car_count / self.capacity
        jitter = min(max(rng.lognormal(self.jitter_sigma), self.jitter_lo), self.jitter_hi)
        return jitter / effective_speed(vclass, ratio)

    def in_transit_mean(self, ratio: float) -> float:
        """
        按给定密度比，平均每个区段有多少辆车处在 CarDepart 与下一区段 CarArrive 之间

        区段流量 = 区段车辆数 / 平均通行时间，在途车辆数 = 流量 × L
        """
        mean_crossing = sum(1.0 / effective_speed(v, ratio) for v in SPEED_CLASSES) / len(SPEED_CLASSES)
        return ratio * self.capacity * self.lookahead / mean_crossing

    def init(self, obj: ObjectId, rng: RngStream, emit: Emit) -> HighwayZone:
        zone = HighwayZone(obj)
        ratio = self.ratios[obj]
        count = rng.poisson(ratio * self.capacity)
        for i in range(count):
            node = _CarNode(zone.new_car_id(), SPEED_CLASSES[i % 3], 0.0)
            zone.append(node)
        for node in zone.cars():
            residual = rng.uniform() * self._traversal(zone, node.vclass, rng)
            emit(residual, obj, "CarDepart", node.car_id)
        # 开始时已经在途、将在 [0, L) 内进入本区段的车辆
        for i in range(rng.poisson(self.in_transit_mean(ratio))):
            emit(rng.uniform() * self.lookahead, obj, "CarArrive",
                 (zone.new_car_id(), SPEED_CLASSES[i % 3]))
        if obj in self.entries:
            exact = draw_exponential(rng, self.injection_mean)
            emit(max(exact, self.lookahead), obj, "CarArrive", exact)
        return zone

    def _enter(self, zone: HighwayZone, car_id: int, vclass: float, now: float,
               rng: RngStream, emit: Emit):
        node = _CarNode(car_id, vclass, now)
        # 超车判断: 逐个比较区段内已有车辆的车型速度
        other = zone.head
        while other is not None:
            if other.vclass < vclass:
                zone.surpasses += 1
            other = other.next
        zone.append(node)
        zone.arrivals += 1
        emit(now + self._traversal(zone, vclass, rng), zone.zone_id, "CarDepart", car_id)

    def _inject(self, zone: HighwayZone, exact: float, now: float, rng: RngStream, emit: Emit):
        """注入精确时刻不晚于 now 的所有新车，payload 记录注入过程的精确累计时刻"""
        while exact <= now:
            zone.injected += 1
            self._enter(zone, zone.new_car_id(), SPEED_CLASSES[zone.injected % 3], now, rng, emit)
            exact += draw_exponential(rng, self.injection_mean)
        emit(max(exact, now + self.lookahead), zone.zone_id, "CarArrive", exact)

    def on_event(self, zone: HighwayZone, event: EventRecord, rng: RngStream, emit: Emit) -> HighwayZone:
        now = event.key.ts
        if event.kind == "CarArrive":
            if isinstance(event.payload, tuple):
                car_id, vclass = event.payload
                self._enter(zone, car_id, vclass, now, rng, emit)
            else:
                self._inject(zone, event.payload, now, rng, emit)
        elif event.kind == "CarDepart":
            node = zone.unlink(event.payload)
            zone.departures += 1
            z = zone.zone_id
            if z in self.exits and (z == self.n_objects - 1 or rng.uniform() < self.exit_prob):
                zone.exited += 1
            else:
                nxt = (z + 1) % self.n_objects
                emit(now + self.lookahead, nxt, "CarArrive", (node.car_id, node.vclass))
        else:
            raise ConsistencyError(f"高速公路模型不认识的事件类型: {event.kind}")
        return zone

    def state_bytes(self, zone: HighwayZone) -> bytes:
        parts = [_ZONE_HEADER.pack(zone.car_count, zone.surpasses, zone.arrivals,
                                   zone.departures, zone.exited, zone.injected, zone.next_car)]
        node = zone.head
        while node is not None:
            parts.append(_CAR.pack(node.car_id, node.vclass, node.entry_ts))
            node = node.next
        return b"".join(parts)

    def copy_state(self, zone: HighwayZone) -> HighwayZone:
        other = HighwayZone(zone.zone_id)
        for name in ("surpasses", "arrivals", "departures", "exited", "injected", "next_car"):
            setattr(other, name, getattr(zone, name))
        for node in zone.cars():
            other.append(_CarNode(node.car_id, node.vclass, node.entry_ts))
        return other

    def describe(self) -> str:
        return (f"highway(zones={self.n_objects}, layout={self.layout}, "
                f"capacity_ref={self.capacity:.2f}, L={self.lookahead:.6g})")


def highway_build(config: WorkloadConfig) -> HighwayModel:
    """
    按工作负载配置构造高速公路模型

    Args:
        config: 工作负载配置；params 可覆盖 zones、layout、entry_zones、exit_zones、
                exit_prob、lanes、speed_limit、safe_gap_s、jitter_sigma

    Returns:
        HighwayModel 实例
    """
    params = config.params
    if config.scale is None:
        n = int(params.get("zones", DESK_ZONES))
    else:
        n = int(round(config.scale * FULL_ZONES))
    if n < 2:
        raise ConfigError(f"高速公路至少需要 2 个区段，当前 {n}")
    ratio = LOAD_RATIOS[config.load]
    if config.balance == "unbalanced":
        half = n // 2
        ratios = [ratio] * half + [ratio * UNBALANCED_FACTOR] * (n - half)
    else:
        ratios = [ratio] * n
    return HighwayModel(
        ratios, config.seed,
        layout=params.get("layout", "closed"),
        entry_zones=params.get("entry_zones", (0,)),
        exit_zones=params.get("exit_zones", ()),
        exit_prob=float(params.get("exit_prob", 0.1)),
        lanes=int(params.get("lanes", 3)),
        speed_limit=float(params.get("speed_limit", 130.0)),
        safe_gap_s=float(params.get("safe_gap_s", 2.0)),
        jitter_sigma=float(params.get("jitter_sigma", 0.05)),
    )


def total_cars(states: Iterable[HighwayZone]) -> int:
    """各区段内的车辆总数"""
    return sum(zone.car_count for zone in states)


def in_flight_cars(pending: Iterable[EventRecord]) -> int:
    """正在区段之间移动的车辆数 (尚未处理、携带车辆的 CarArrive)"""
    return sum(1 for ev in pending if ev.kind == "CarArrive" and isinstance(ev.payload, tuple))
