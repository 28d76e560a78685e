"""
PCS 个人通信服务模型
六边形蜂窝网格，每个小区固定数量的信道；呼叫到达、结束与越区切换，
每次占用信道前扫描全部忙信道计算发射功率
"""

import math
import struct
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np

from .core import EventRecord, ObjectId, RngStream, draw_exponential
from .errors import ConfigError, ConsistencyError
from .model_contract import Emit, Model, WorkloadConfig

FULL_CELLS = 4096
FULL_CHANNELS = 5000
DESK_CELLS = 256
DESK_CHANNELS = 512

LOAD_TARGETS = {"light": 120.0, "medium": 600.0, "heavy": 1200.0}

_HEADER = struct.Struct("<qqqdd")


@dataclass(frozen=True)
class PowerParams:
    """功率计算常数"""
    p_min: float = 0.01
    p_max: float = 1.0
    noise: float = 10.0
    alpha: float = 3.5


class PcsCell:
    """
    单个小区的状态

    Args:
        cell_id: 小区编号
        row, col: 六边形网格上的行列位置
        channels: 信道数
    """

    __slots__ = ("cell_id", "row", "col", "busy", "power", "dist", "end_ts",
                 "busy_count", "blocked", "arrivals", "busy_integral", "last_change")

    def __init__(self, cell_id: int, row: int, col: int, channels: int):
        self.cell_id = cell_id
        self.row = row
        self.col = col
        self.busy = np.zeros(channels, dtype=bool)
        self.power = np.zeros(channels, dtype=np.float64)
        self.dist = np.zeros(channels, dtype=np.float64)
        self.end_ts = np.zeros(channels, dtype=np.float64)
        self.busy_count = 0
        self.blocked = 0
        self.arrivals = 0
        self.busy_integral = 0.0
        self.last_change = 0.0

    @property
    def channels(self) -> int:
        return len(self.busy)

    def copy(self) -> "PcsCell":
        other = PcsCell.__new__(PcsCell)
        for name in self.__slots__:
            value = getattr(self, name)
            setattr(other, name, value.copy() if isinstance(value, np.ndarray) else value)
        return other

    def advance_to(self, now: float):
        """把忙信道数的时间积分推进到 now"""
        self.busy_integral += self.busy_count * (now - self.last_change)
        self.last_change = now


def compute_power(cell: PcsCell, params: PowerParams = PowerParams()) -> float:
    """
    根据小区内已有呼叫的干扰计算新呼叫的发射功率
    干扰 = 所有忙信道功率按路径损耗 (1 + d)^-alpha 衰减后的和，
    功率 = p_min * (1 + 干扰 / 噪声)，截断到 [p_min, p_max]

    Args:
        cell: 小区状态
        params: 功率常数

    Returns:
        发射功率 (瓦)
    """
    mask = cell.busy
    interference = float(np.sum(cell.power[mask] * (1.0 + cell.dist[mask]) ** (-params.alpha)))
    p = params.p_min * (1.0 + interference / params.noise)
    return min(max(p, params.p_min), params.p_max)


def hex_neighbors(row: int, col: int, side: int) -> List[int]:
    """奇数行右移 (odd-r) 六边形网格上的邻居编号，边界小区少于 6 个"""
    if row % 2 == 0:
        deltas = ((0, -1), (0, 1), (-1, -1), (-1, 0), (1, -1), (1, 0))
    else:
        deltas = ((0, -1), (0, 1), (-1, 0), (-1, 1), (1, 0), (1, 1))
    out = []
    for dr, dc in deltas:
        r, c = row + dr, col + dc
        if 0 <= r < side and 0 <= c < side:
            out.append(r * side + c)
    return out


class PcsModel(Model):
    """
    PCS 模型

    Args:
        side: 网格边长 (小区数 = side^2)
        channels: 每个小区的信道数
        target: 每个小区的目标平均忙信道数
        seed: 全局随机种子
        call_mean: 呼叫时长均值 (分钟)
        move_mean: 越区移动间隔均值 (分钟)
        min_latency: 最小事件延迟，同时是模型的前瞻
        power: 功率常数
    """

    name = "pcs"

    def __init__(self, side: int, channels: int, target: float, seed: int,
                 call_mean: float = 2.0, move_mean: float = 5.0,
                 min_latency: float = 0.01, power: PowerParams = PowerParams()):
        super().__init__(side * side, min_latency, seed)
        self.side = side
        self.channels = channels
        self.target = target
        self.call_mean = call_mean
        self.move_mean = move_mean
        self.arrival_rate = target / call_mean
        self.power = power
        self.neighbors = [hex_neighbors(i // side, i % side, side) for i in range(side * side)]

    def _delay(self, value: float) -> float:
        return max(value, self.lookahead)

    def _next_arrival(self, rng: RngStream) -> float:
        return draw_exponential(rng, 1.0 / self.arrival_rate)

    def init(self, obj: ObjectId, rng: RngStream, emit: Emit) -> PcsCell:
        cell = PcsCell(obj, obj // self.side, obj % self.side, self.channels)
        # 预热启动: 开始时已有 Poisson(target) 个通话在进行
        for _ in range(min(rng.poisson(self.target), self.channels)):
            self._admit(cell, 0.0, draw_exponential(rng, self.call_mean), rng, emit)
        exact = self._next_arrival(rng)
        emit(max(exact, self.lookahead), obj, "CallArrival", exact)
        return cell

    def _arrivals(self, cell: PcsCell, exact: float, now: float, rng: RngStream, emit: Emit):
        """
        接纳精确到达时刻不晚于 now 的所有新呼叫，再调度下一次到达事件

        payload 记录到达过程的精确累计时刻；事件时间戳被前瞻推迟时，
        推迟期间到达的呼叫在事件触发时一并接纳，长期到达率保持不变
        """
        while exact <= now:
            cell.arrivals += 1
            self._admit(cell, now, draw_exponential(rng, self.call_mean), rng, emit)
            exact += self._next_arrival(rng)
        emit(max(exact, now + self.lookahead), cell.cell_id, "CallArrival", exact)

    def _admit(self, cell: PcsCell, now: float, duration: float, rng: RngStream, emit: Emit):
        slot = int(np.argmin(cell.busy))
        if cell.busy[slot]:
            cell.blocked += 1
            return
        cell.advance_to(now)
        p = compute_power(cell, self.power)
        cell.busy[slot] = True
        cell.power[slot] = p
        cell.dist[slot] = rng.uniform()
        cell.busy_count += 1
        move = draw_exponential(rng, self.move_mean)
        if move < duration:
            leave = now + self._delay(move)
            cell.end_ts[slot] = leave
            emit(leave, cell.cell_id, "HandoffLeave", (slot, duration - move))
        else:
            end = now + self._delay(duration)
            cell.end_ts[slot] = end
            emit(end, cell.cell_id, "CallEnd", slot)

    def _release(self, cell: PcsCell, slot: int, now: float):
        if not cell.busy[slot] or cell.end_ts[slot] != now:
            raise ConsistencyError(
                f"小区 {cell.cell_id} 信道 {slot} 的结束事件 ts={now} 与占用记录不符")
        cell.advance_to(now)
        cell.busy[slot] = False
        cell.power[slot] = 0.0
        cell.dist[slot] = 0.0
        cell.end_ts[slot] = 0.0
        cell.busy_count -= 1

    def on_event(self, cell: PcsCell, event: EventRecord, rng: RngStream, emit: Emit) -> PcsCell:
        now = event.key.ts
        kind = event.kind
        if kind == "CallArrival":
            self._arrivals(cell, event.payload, now, rng, emit)
        elif kind == "HandoffArrive":
            self._admit(cell, now, event.payload, rng, emit)
        elif kind == "CallEnd":
            self._release(cell, event.payload, now)
        elif kind == "HandoffLeave":
            slot, remaining = event.payload
            self._release(cell, slot, now)
            nbrs = self.neighbors[cell.cell_id]
            if nbrs:
                target = nbrs[rng.integers(len(nbrs))]
                emit(now + self.lookahead, target, "HandoffArrive", remaining)
        else:
            raise ConsistencyError(f"PCS 模型不认识的事件类型: {kind}")
        return cell

    def state_bytes(self, cell: PcsCell) -> bytes:
        header = _HEADER.pack(cell.busy_count, cell.blocked, cell.arrivals,
                              cell.busy_integral, cell.last_change)
        return (header + cell.busy.tobytes() + cell.power.tobytes()
                + cell.dist.tobytes() + cell.end_ts.tobytes())

    def copy_state(self, cell: PcsCell) -> PcsCell:
        return cell.copy()

    def describe(self) -> str:
        return (f"pcs(cells={self.n_objects}, channels={self.channels}, "
                f"target={self.target:.1f}, L={self.lookahead:g})")


def pcs_build(config: WorkloadConfig) -> PcsModel:
    """
    按工作负载配置构造 PCS 模型

    Args:
        config: 工作负载配置；params 可覆盖 call_mean、move_mean、min_latency、
                p_min、p_max、noise、alpha，桌面规模下还可覆盖 cells、channels

    Returns:
        PcsModel 实例
    """
    params = config.params
    if config.scale is None:
        side = int(round(math.sqrt(params.get("cells", DESK_CELLS))))
        channels = int(params.get("channels", DESK_CHANNELS))
    else:
        side = int(round(math.sqrt(config.scale * FULL_CELLS)))
        channels = FULL_CHANNELS
    if side < 1:
        raise ConfigError(f"规模因子 {config.scale} 得不到任何小区")
    if channels < 1:
        raise ConfigError(f"信道数必须为正: {channels}")
    target = LOAD_TARGETS[config.load] * channels / FULL_CHANNELS
    power = PowerParams(
        p_min=float(params.get("p_min", 0.01)),
        p_max=float(params.get("p_max", 1.0)),
        noise=float(params.get("noise", 10.0)),
        alpha=float(params.get("alpha", 3.5)),
    )
    return PcsModel(side, channels, target, config.seed,
                    call_mean=float(params.get("call_mean", 2.0)),
                    move_mean=float(params.get("move_mean", 5.0)),
                    min_latency=float(params.get("min_latency", 0.01)),
                    power=power)


def mean_busy(states: Iterable[PcsCell], horizon: float) -> float:
    """各小区在 [0, horizon) 上的时间平均忙信道数的均值"""
    values = []
    for cell in states:
        integral = cell.busy_integral + cell.busy_count * (horizon - cell.last_change)
        values.append(integral / horizon)
    return float(np.mean(values)) if values else 0.0


def blocked_calls(states: Iterable[PcsCell]) -> int:
    return sum(cell.blocked for cell in states)
