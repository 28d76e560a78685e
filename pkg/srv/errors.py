"""
错误类型模块
引擎、事件池、模型与基准工具共用的异常层次
"""


class PdesError(Exception):
    """所有仿真平台错误的基类"""


class InvalidParameterError(PdesError, ValueError):
    """参数取值非法 (如非正的均值)"""


class InvalidTimeError(PdesError, ValueError):
    """虚拟时间非法 (负数、NaN 或无穷)"""


class StaleInsertError(PdesError):
    """插入的事件时间戳低于化石回收水位"""


class StaleHandleError(PdesError):
    """事件句柄已被化石回收"""


class DestinationMismatchError(PdesError):
    """事件目的对象与日历所属对象不一致"""


class CausalityViolationError(PdesError):
    """模型调度了早于当前事件的新事件"""


class UnsupportedLookaheadError(PdesError):
    """保守引擎不支持零前瞻模型"""


class LookaheadViolationError(PdesError):
    """新事件违反前瞻约束 ts_new >= ts_now + L"""


class RollbackError(PdesError):
    """回滚时找不到可用的检查点"""


class ConsistencyError(PdesError):
    """模型内部状态不一致"""


class CapacityError(PdesError):
    """线程数超出逻辑 CPU 容量"""


class ConfigError(PdesError):
    """配置文件或工作负载配置错误"""


class UsageError(PdesError):
    """命令行用法错误 (未知引擎、模型等)"""
