"""
原子读-改-写 (RMW) 原语
CPython 没有硬件 CAS，这里每个字由一把私有锁保护，临界区只包含一次读写，
调用方从不跨调用持有这把锁
"""

import threading
from typing import Any


class AtomicWord:
    """单字原子变量，支持 load / store / compare_and_swap / swap"""

    __slots__ = ("_value", "_lock")

    def __init__(self, value: Any = None):
        self._value = value
        self._lock = threading.Lock()

    def load(self) -> Any:
        return self._value

    def store(self, value: Any):
        with self._lock:
            self._value = value

    def compare_and_swap(self, expected: Any, new: Any) -> bool:
        with self._lock:
            if self._value == expected:
                self._value = new
                return True
            return False

    def swap(self, new: Any) -> Any:
        with self._lock:
            old = self._value
            self._value = new
            return old

    def fetch_min(self, value: Any) -> Any:
        """写入 min(当前值, value)，返回旧值；None 视为正无穷"""
        with self._lock:
            old = self._value
            if old is None or value < old:
                self._value = value
            return old


class AtomicCounter:
    """原子计数器"""

    __slots__ = ("_value", "_lock")

    def __init__(self, value: int = 0):
        self._value = value
        self._lock = threading.Lock()

    def load(self) -> int:
        return self._value

    def store(self, value: int):
        with self._lock:
            self._value = value

    def fetch_add(self, delta: int = 1) -> int:
        with self._lock:
            old = self._value
            self._value = old + delta
            return old


class BucketLock:
    """
    桶级互斥字
    先尝试非阻塞获取，失败时阻塞等待并在拿到锁后记一次争用，用于测量不同桶之间是否互相阻塞
    """

    __slots__ = ("_lock", "contended")

    def __init__(self):
        self._lock = threading.Lock()
        self.contended = 0

    def __enter__(self):
        if not self._lock.acquire(blocking=False):
            self._lock.acquire()
            # 持锁后再计数，计数本身受同一把锁保护
            self.contended += 1
        return self

    def __exit__(self, exc_type, exc, tb):
        self._lock.release()
        return False
