"""
硬件拓扑模块
发现 NUMA 节点、物理核与逻辑 CPU 的层次，并给出集中式 (clustered) 与环形 (circular)
两种线程和对象归属的放置策略
"""

import json
import logging
import math
import os
import platform
import subprocess
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import psutil

from .errors import CapacityError, ConfigError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

POLICIES = ("clustered", "circular")


def get_platform_info() -> Dict:
    """获取平台信息"""
    system = platform.system()
    return {
        "system": system,
        "machine": platform.machine(),
        "python": platform.python_version(),
        "implementation": platform.python_implementation(),
        "optimize": sys.flags.optimize,
        "is_linux": system == "Linux",
        "logical_cpus": psutil.cpu_count(logical=True) or 1,
    }


@dataclass(frozen=True)
class NumaNode:
    """
    一个 NUMA 节点

    Args:
        node_id: 节点编号
        cores: 物理核列表，每个核是其逻辑 CPU 编号的元组
        memory: 内存容量说明 (仅供参考)
    """
    node_id: int
    cores: Tuple[Tuple[int, ...], ...]
    memory: str = ""

    @property
    def cpus(self) -> List[int]:
        return [cpu for core in self.cores for cpu in core]

    def core_first(self) -> List[int]:
        """先占满一个核的全部硬件线程，再用下一个核"""
        return self.cpus

    def core_spread(self) -> List[int]:
        """先取每个核的第一个硬件线程，再取第二个，依此类推"""
        width = max((len(core) for core in self.cores), default=0)
        return [core[t] for t in range(width) for core in self.cores if t < len(core)]


@dataclass(frozen=True)
class Topology:
    """机器拓扑，构造后不可变"""
    nodes: Tuple[NumaNode, ...]
    name: str = "machine"

    def __post_init__(self):
        seen = set()
        for node in self.nodes:
            for cpu in node.cpus:
                if cpu in seen:
                    raise ConfigError(f"逻辑 CPU {cpu} 在拓扑中出现多次")
                seen.add(cpu)
        if not seen:
            raise ConfigError("拓扑中没有任何逻辑 CPU")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cpus(self) -> int:
        return sum(len(node.cpus) for node in self.nodes)

    @property
    def threads_per_core(self) -> int:
        return max(len(core) for node in self.nodes for core in node.cores)

    def node_of_cpu(self, cpu: int) -> int:
        for node in self.nodes:
            if cpu in node.cpus:
                return node.node_id
        raise KeyError(cpu)

    def node_index(self, node_id: int) -> int:
        for i, node in enumerate(self.nodes):
            if node.node_id == node_id:
                return i
        raise KeyError(node_id)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "nodes": [{"id": n.node_id, "memory": n.memory, "cores": [list(c) for c in n.cores]}
                      for n in self.nodes],
        }

    def summary(self) -> str:
        return (f"{self.name}: {self.n_nodes} 个 NUMA 节点, {self.n_cpus} 个逻辑 CPU, "
                f"每核 {self.threads_per_core} 线程")


def _build(groups: Dict[int, Dict[int, List[int]]], name: str) -> Topology:
    """groups: node -> core -> cpus"""
    nodes = []
    for node_id in sorted(groups):
        cores = tuple(tuple(sorted(cpus)) for _, cpus in sorted(groups[node_id].items(),
                                                               key=lambda kv: min(kv[1])))
        nodes.append(NumaNode(node_id, cores))
    return Topology(tuple(nodes), name)


def _from_lscpu() -> Optional[Topology]:
    try:
        out = subprocess.run(["lscpu", "-p=CPU,CORE,NODE"], capture_output=True,
                             text=True, check=True, timeout=10).stdout
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug("lscpu 不可用: %s", e)
        return None
    groups: Dict[int, Dict[int, List[int]]] = defaultdict(lambda: defaultdict(list))
    for line in out.splitlines():
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) < 3:
            continue
        try:
            cpu = int(fields[0])
            core = int(fields[1]) if fields[1] else cpu
            node = int(fields[2]) if fields[2] else 0
        except ValueError:
            logger.debug("无法解析 lscpu 行: %s", line)
            return None
        groups[node][core].append(cpu)
    if not groups:
        return None
    return _build(groups, "lscpu")


def _parse_cpulist(text: str) -> List[int]:
    cpus = []
    for part in text.strip().split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            cpus.extend(range(int(lo), int(hi) + 1))
        else:
            cpus.append(int(part))
    return cpus


def _from_sysfs(root: Path = Path("/sys/devices/system")) -> Optional[Topology]:
    node_dirs = sorted(root.glob("node/node[0-9]*"))
    if not node_dirs:
        return None
    groups: Dict[int, Dict[int, List[int]]] = defaultdict(lambda: defaultdict(list))
    try:
        for node_dir in node_dirs:
            node_id = int(node_dir.name[len("node"):])
            for cpu in _parse_cpulist((node_dir / "cpulist").read_text()):
                core_file = root / "cpu" / f"cpu{cpu}" / "topology" / "core_id"
                core = int(core_file.read_text()) if core_file.exists() else cpu
                # core_id 只在 package 内唯一，按节点分组后不会混淆
                groups[node_id][core].append(cpu)
    except (OSError, ValueError) as e:
        logger.debug("sysfs 拓扑读取失败: %s", e)
        return None
    return _build(groups, "sysfs")


def _flat() -> Topology:
    try:
        cpus = sorted(os.sched_getaffinity(0))
    except AttributeError:
        cpus = list(range(psutil.cpu_count(logical=True) or 1))
    return Topology((NumaNode(0, tuple((c,) for c in cpus)),), "flat")


def discover() -> Topology:
    """
    发现本机拓扑
    依次尝试 lscpu、sysfs，都不可用时退化为单节点拓扑

    Returns:
        机器拓扑
    """
    for source in (_from_lscpu, _from_sysfs):
        try:
            topo = source()
        except ConfigError as e:
            logger.debug("拓扑探测结果无效: %s", e)
            topo = None
        if topo is not None:
            logger.info("拓扑: %s", topo.summary())
            return topo
    topo = _flat()
    logger.info("未能读取 NUMA 信息，使用单节点拓扑: %s", topo.summary())
    return topo


def load_topology(path: str) -> Topology:
    """
    从 JSON 文件加载拓扑 (nodes -> cores -> cpu ids)

    Args:
        path: 拓扑文件路径

    Returns:
        拓扑
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        nodes = tuple(
            NumaNode(int(n["id"]), tuple(tuple(int(c) for c in core) for core in n["cores"]),
                     str(n.get("memory", "")))
            for n in data["nodes"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"拓扑文件 {path} 无法读取: {e}") from e
    return Topology(nodes, data.get("name", Path(path).stem))


@dataclass
class Placement:
    """
    线程与对象的放置

    Args:
        thread_to_cpu: 工作线程 -> 逻辑 CPU
        thread_node: 工作线程 -> NUMA 节点
        object_home: 对象 -> 归属 NUMA 节点
        policy: 使用的策略
    """
    thread_to_cpu: Dict[int, int]
    thread_node: Dict[int, int]
    object_home: List[int] = field(default_factory=list)
    policy: str = "clustered"

    def threads_per_node(self) -> Dict[int, int]:
        counts: Dict[int, int] = defaultdict(int)
        for node in self.thread_node.values():
            counts[node] += 1
        return dict(counts)


def _check_capacity(n_threads: int, t: Topology):
    if n_threads < 1:
        raise CapacityError(f"线程数必须为正: {n_threads}")
    if n_threads > t.n_cpus:
        raise CapacityError(f"线程数 {n_threads} 超过拓扑的逻辑 CPU 数 {t.n_cpus}")


def place_clustered(n_threads: int, t: Topology) -> Placement:
    """
    集中式放置: 占满节点 0 的全部 CPU 后才使用节点 1，节点内按核优先

    Args:
        n_threads: 工作线程数
        t: 拓扑

    Returns:
        放置结果 (object_home 为空，由 home_objects 填写)
    """
    _check_capacity(n_threads, t)
    order = [(node.node_id, cpu) for node in t.nodes for cpu in node.core_first()]
    chosen = order[:n_threads]
    return Placement({i: cpu for i, (_, cpu) in enumerate(chosen)},
                     {i: node for i, (node, _) in enumerate(chosen)},
                     policy="clustered")


def place_circular(n_threads: int, t: Topology) -> Placement:
    """
    环形放置: 线程 i 放到节点 i mod n_nodes 的下一个空闲 CPU，节点内按核分散；
    节点占满后跳到下一个仍有空闲的节点
    """
    _check_capacity(n_threads, t)
    free = [list(node.core_spread()) for node in t.nodes]
    cpus, nodes = {}, {}
    k = 0
    for i in range(n_threads):
        while not free[k % t.n_nodes]:
            k += 1
        idx = k % t.n_nodes
        cpus[i] = free[idx].pop(0)
        nodes[i] = t.nodes[idx].node_id
        k += 1
    return Placement(cpus, nodes, policy="circular")


def home_objects(n_objects: int, t: Topology, policy: str) -> List[int]:
    """
    对象归属节点: clustered 按连续编号分块，circular 按编号取模

    Args:
        n_objects: 对象数
        t: 拓扑
        policy: clustered 或 circular

    Returns:
        每个对象的归属节点编号
    """
    if n_objects < 1:
        raise ConfigError(f"对象数必须为正: {n_objects}")
    ids = [node.node_id for node in t.nodes]
    if policy == "clustered":
        block = math.ceil(n_objects / len(ids))
        return [ids[i // block] for i in range(n_objects)]
    if policy == "circular":
        return [ids[i % len(ids)] for i in range(n_objects)]
    raise ConfigError(f"未知放置策略: {policy}")


def resolve_policy(policy: str, engine: str) -> str:
    """auto: 乐观引擎用集中式，保守引擎用环形，顺序引擎用集中式"""
    if policy == "auto":
        return "circular" if engine == "conservative" else "clustered"
    if policy not in POLICIES:
        raise ConfigError(f"未知放置策略: {policy}")
    return policy


def make_placement(n_threads: int, n_objects: int, t: Topology, policy: str) -> Placement:
    """按策略同时放置线程和对象"""
    if policy == "clustered":
        placement = place_clustered(n_threads, t)
    elif policy == "circular":
        placement = place_circular(n_threads, t)
    else:
        raise ConfigError(f"未知放置策略: {policy}")
    placement.object_home = home_objects(n_objects, t, policy)
    return placement


def first_touch_owners(placement: Placement, n_threads: int) -> Dict[int, List[int]]:
    """
    每个工作线程负责初始化的对象: 归属本节点的对象由该节点上的线程轮流初始化，
    没有线程的节点上的对象轮流分给全部线程

    Returns:
        线程 -> 对象列表
    """
    by_node: Dict[int, List[int]] = defaultdict(list)
    for w in range(n_threads):
        by_node[placement.thread_node[w]].append(w)
    owners: Dict[int, List[int]] = {w: [] for w in range(n_threads)}
    counters: Dict[int, int] = defaultdict(int)
    orphan = 0
    for obj, node in enumerate(placement.object_home):
        workers = by_node.get(node)
        if workers:
            owners[workers[counters[node] % len(workers)]].append(obj)
            counters[node] += 1
        else:
            owners[orphan % n_threads].append(obj)
            orphan += 1
    return owners


def pin_current_thread(cpu: int) -> bool:
    """
    尽力把当前线程绑定到逻辑 CPU；平台不支持或 CPU 不可用时返回 False
    """
    try:
        if cpu not in os.sched_getaffinity(0):
            return False
        os.sched_setaffinity(0, {cpu})
        return True
    except (AttributeError, OSError) as e:
        logger.debug("线程绑定到 CPU %d 失败: %s", cpu, e)
        return False


def machine_cpus() -> int:
    """本机可用的逻辑 CPU 数"""
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return psutil.cpu_count(logical=True) or 1
