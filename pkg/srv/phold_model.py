"""
PHOLD 合成负载
每个事件以固定概率发给自己，否则发给随机对象，时间增量 = 前瞻 + 指数分布；
用于引擎的快速正确性测试，也允许零前瞻 (只能在乐观引擎上运行)
"""

import struct

from .core import EventRecord, ObjectId, RngStream, draw_exponential
from .errors import ConfigError, ConsistencyError
from .model_contract import Emit, Model, WorkloadConfig

LOAD_POPULATION = {"light": 1, "medium": 4, "heavy": 16}

_STATE = struct.Struct("<qqdd")


class PholdState:
    __slots__ = ("handled", "sent_remote", "ts_sum", "last_ts")

    def __init__(self):
        self.handled = 0
        self.sent_remote = 0
        self.ts_sum = 0.0
        self.last_ts = 0.0


class PholdModel(Model):
    """
    PHOLD 模型

    Args:
        n_objects: 对象数
        seed: 全局随机种子
        population: 每个对象的初始事件数
        frac_self: 发给自己的事件比例
        mean_delay: 指数增量均值
        lookahead: 最小时间增量，可为 0
    """

    name = "phold"

    def __init__(self, n_objects: int, seed: int, population: int = 1,
                 frac_self: float = 0.5, mean_delay: float = 1.0, lookahead: float = 0.1):
        if n_objects < 1 or population < 1:
            raise ConfigError(f"PHOLD 对象数与初始事件数必须为正: {n_objects}, {population}")
        if not 0.0 <= frac_self <= 1.0:
            raise ConfigError(f"发给自己的比例必须在 [0, 1]: {frac_self}")
        if lookahead < 0:
            raise ConfigError(f"前瞻不能为负: {lookahead}")
        super().__init__(n_objects, lookahead, seed)
        self.population = population
        self.frac_self = frac_self
        self.mean_delay = mean_delay

    def _send(self, obj: ObjectId, now: float, rng: RngStream, emit: Emit, state: PholdState):
        if self.n_objects == 1 or rng.uniform() < self.frac_self:
            dst = obj
        else:
            dst = rng.integers(self.n_objects - 1)
            if dst >= obj:
                dst += 1
            state.sent_remote += 1
        delay = self.lookahead + draw_exponential(rng, self.mean_delay)
        if delay <= 0.0:
            delay = self.mean_delay
        emit(now + delay, dst, "Ping", None)

    def init(self, obj: ObjectId, rng: RngStream, emit: Emit) -> PholdState:
        state = PholdState()
        for _ in range(self.population):
            self._send(obj, 0.0, rng, emit, state)
        return state

    def on_event(self, state: PholdState, event: EventRecord, rng: RngStream, emit: Emit) -> PholdState:
        if event.kind != "Ping":
            raise ConsistencyError(f"PHOLD 模型不认识的事件类型: {event.kind}")
        now = event.key.ts
        state.handled += 1
        state.ts_sum += now
        state.last_ts = now
        self._send(event.key.dst, now, rng, emit, state)
        return state

    def state_bytes(self, state: PholdState) -> bytes:
        return _STATE.pack(state.handled, state.sent_remote, state.ts_sum, state.last_ts)

    def copy_state(self, state: PholdState) -> PholdState:
        other = PholdState()
        other.handled = state.handled
        other.sent_remote = state.sent_remote
        other.ts_sum = state.ts_sum
        other.last_ts = state.last_ts
        return other


def phold_build(config: WorkloadConfig) -> PholdModel:
    """按工作负载配置构造 PHOLD 模型；params 可覆盖 objects、frac_self、mean_delay、lookahead"""
    params = config.params
    n = int(params.get("objects", 64))
    if config.scale is not None:
        n = max(1, int(round(config.scale * n)))
    return PholdModel(
        n, config.seed,
        population=int(params.get("population", LOAD_POPULATION[config.load])),
        frac_self=float(params.get("frac_self", 0.5)),
        mean_delay=float(params.get("mean_delay", 1.0)),
        lookahead=float(params.get("lookahead", 0.1)),
    )
