"""
基准测试命令行
按 引擎 × 模型 × 负载 × 均衡 × 线程数 扫描，统计提交吞吐量与总吞吐量，
多次采样求均值和标准差并输出 CSV；verify 模式对照顺序引擎检查指纹
"""

import argparse
import logging
import shlex
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config_manager import ConfigManager
from .core import EventKey, Fingerprint, first_divergence
from .engine_conservative import ConservativeEngine, EventOrder
from .engine_optimistic import OptimisticEngine
from .engine_sequential import SequentialEngine
from .errors import CapacityError, ConfigError, PdesError, UsageError
from .metrics import RunMetrics, StopCondition
from .model_contract import BALANCES, LOADS, MODELS, Model, WorkloadConfig, build_model
from .topology import (POLICIES, Topology, discover, get_platform_info,
                       load_topology, machine_cpus, resolve_policy)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

ENGINES = ("seq", "conservative", "optimistic")
ENGINE_ALIASES = {"sequential": "seq"}

COLUMNS = ["engine", "model", "load", "balance", "threads", "sample",
           "committed_eps", "total_eps", "rollbacks", "wall_s"]
EXTRA_COLUMNS = ["committed_events", "processed_events", "fingerprint"]
STAT_COLUMNS = ["committed_eps_mean", "committed_eps_std", "total_eps_mean", "total_eps_std"]
CONFIG_KEYS = ["engine", "model", "load", "balance", "threads"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_CAPACITY = 3


@dataclass
class SweepSpec:
    """
    一次扫描的完整描述

    Args:
        engine: seq / conservative / optimistic
        workload: 模型与负载
        threads: 线程数列表
        samples: 每个配置的采样次数
        duration_s: 墙钟模式下每次运行的秒数
        events: 事件预算；设置后使用确定性的事件预算模式
        seed: 全局随机种子
        placement: clustered / circular / auto
        out: CSV 输出路径
        warmup_fraction: 墙钟模式下不计入吞吐量的前置比例
        engine_options: 引擎调优参数 (来自配置文件)
    """
    engine: str = "seq"
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    threads: List[int] = field(default_factory=lambda: [1])
    samples: int = 20
    duration_s: float = 60.0
    events: Optional[int] = None
    seed: int = 42
    placement: str = "auto"
    out: Optional[str] = None
    warmup_fraction: float = 0.05
    engine_options: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        self.engine = ENGINE_ALIASES.get(self.engine, self.engine)
        if self.engine not in ENGINES:
            raise UsageError(f"未知引擎: {self.engine}")
        if self.samples < 1:
            raise UsageError(f"采样次数必须至少为 1: {self.samples}")
        if not self.duration_s > 0:
            raise UsageError(f"运行时长必须为正: {self.duration_s}")
        if self.events is not None and self.events < 1:
            raise UsageError(f"事件预算必须为正: {self.events}")
        if not self.threads or any(t < 1 for t in self.threads):
            raise UsageError(f"线程数列表无效: {self.threads}")
        if self.placement != "auto" and self.placement not in POLICIES:
            raise UsageError(f"未知放置策略: {self.placement}")

    def stop_condition(self) -> StopCondition:
        if self.events is not None:
            return StopCondition(events=self.events)
        return StopCondition(wall_seconds=self.duration_s, warmup_fraction=self.warmup_fraction)


@dataclass
class EngineResult:
    """单次运行的结果"""
    engine: str
    threads: int
    metrics: RunMetrics
    fingerprint: Fingerprint
    traces: Dict[int, List[EventKey]]


def run_engine(engine: str, model: Model, n_threads: int, topology: Topology,
               stop: StopCondition, placement: str = "auto", record_trace: bool = False,
               options: Optional[Dict[str, Any]] = None,
               event_order: Optional[EventOrder] = None) -> EngineResult:
    """
    用指定引擎运行一次模型

    Args:
        engine: seq / conservative / optimistic
        model: 新构造的模型实例
        n_threads: 工作线程数
        topology: 机器拓扑
        stop: 停止条件
        placement: 放置策略 (auto 按引擎解析)
        record_trace: 是否记录提交键序列
        options: 引擎调优参数
        event_order: 保守引擎窗口内事件顺序钩子 (负面对照用)

    Returns:
        EngineResult
    """
    options = dict(options or {})
    if engine == "seq":
        if n_threads != 1:
            raise UsageError(f"顺序引擎只能使用 1 个线程，收到 {n_threads}")
        runner = SequentialEngine(model, stop, record_trace)
        metrics, fingerprint = runner.run()
        return EngineResult(engine, 1, metrics, fingerprint, runner.traces)
    policy = resolve_policy(placement, engine)
    if engine == "conservative":
        runner = ConservativeEngine(model, n_threads, topology, stop, policy, record_trace,
                                    event_order=event_order, **options)
    elif engine == "optimistic":
        runner = OptimisticEngine(model, n_threads, topology, stop, policy, record_trace, **options)
    else:
        raise UsageError(f"未知引擎: {engine}")
    metrics, fingerprint = runner.run()
    return EngineResult(engine, n_threads, metrics, fingerprint, runner.traces)


def _check_capacity(threads: Sequence[int], topology: Topology):
    available = machine_cpus()
    for t in threads:
        if t > available:
            raise CapacityError(f"线程数 {t} 超过本机可用的逻辑 CPU 数 {available}")
        if t > topology.n_cpus:
            raise CapacityError(f"线程数 {t} 超过拓扑 {topology.name} 的逻辑 CPU 数 {topology.n_cpus}")


def _row(spec: SweepSpec, threads: int, sample: int, result: EngineResult) -> Dict[str, Any]:
    m = result.metrics
    committed_eps = m.committed_throughput
    total_eps = m.total_throughput
    if spec.engine != "optimistic":
        total_eps = committed_eps
    w = spec.workload
    return {
        "engine": spec.engine, "model": w.model, "load": w.load, "balance": w.balance,
        "threads": threads, "sample": str(sample),
        "committed_eps": committed_eps, "total_eps": total_eps,
        "rollbacks": m.rollbacks, "wall_s": m.wall_seconds,
        "committed_events": m.committed_events, "processed_events": m.processed_events,
        "fingerprint": result.fingerprint.hex(),
    }


def add_summaries(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    为每个配置在其采样行后追加一行 summary，包含两种吞吐量的均值和标准差 (ddof=1，单个样本为 0)

    Args:
        rows: 采样行

    Returns:
        采样行与 summary 行交错的新列表
    """
    if not rows:
        return []
    df = pd.DataFrame(rows)
    out: List[Dict[str, Any]] = []
    for _, group in df.groupby(CONFIG_KEYS, sort=False):
        out.extend(group.to_dict("records"))
        first = group.iloc[0]
        std = group[["committed_eps", "total_eps"]].std(ddof=1).fillna(0.0)
        mean = group[["committed_eps", "total_eps", "rollbacks", "wall_s"]].mean()
        summary = {key: first[key] for key in CONFIG_KEYS}
        summary.update({
            "sample": "summary",
            "committed_eps": mean["committed_eps"], "total_eps": mean["total_eps"],
            "rollbacks": mean["rollbacks"], "wall_s": mean["wall_s"],
            "committed_eps_mean": mean["committed_eps"], "committed_eps_std": std["committed_eps"],
            "total_eps_mean": mean["total_eps"], "total_eps_std": std["total_eps"],
        })
        out.append(summary)
    return out


def run_sweep(spec: SweepSpec, topology: Optional[Topology] = None,
              progress: Optional[Callable[[str], None]] = None) -> List[Dict[str, Any]]:
    """
    对每个线程数运行 samples 次，每次重新构造模型

    Args:
        spec: 扫描描述
        topology: 机器拓扑，默认自动发现
        progress: 进度回调 (CLI 传入 print)

    Returns:
        采样行与每个配置的 summary 行
    """
    topology = topology or discover()
    if spec.engine == "seq" and any(t != 1 for t in spec.threads):
        raise UsageError("顺序引擎只能使用 1 个线程")
    _check_capacity(spec.threads, topology)
    options = spec.engine_options.get(spec.engine, {})
    rows = []
    for threads in spec.threads:
        for sample in range(spec.samples):
            workload = WorkloadConfig(spec.workload.model, spec.workload.load,
                                      spec.workload.balance, spec.workload.scale,
                                      spec.seed + sample, dict(spec.workload.params))
            model = build_model(workload)
            result = run_engine(spec.engine, model, threads, topology, spec.stop_condition(),
                                spec.placement, options=options)
            row = _row(spec, threads, sample, result)
            rows.append(row)
            if progress is not None:
                progress(f"  {spec.engine} {workload.model}-{workload.load} 线程={threads} "
                         f"样本={sample}: 提交 {row['committed_eps']:.0f} ev/s, "
                         f"总计 {row['total_eps']:.0f} ev/s, 回滚 {row['rollbacks']}")
    return add_summaries(rows)


def metadata_line(command: Optional[str] = None) -> str:
    """CSV 第一行: 解释器、优化标志、numpy 版本和命令行"""
    info = get_platform_info()
    cmd = command if command is not None else shlex.join(sys.argv)
    return (f"# build={info['implementation']}-{info['python']} optimize={info['optimize']} "
            f"numpy={np.__version__} system={info['system']}-{info['machine']} "
            f"cpus={info['logical_cpus']} cmd={cmd}")


def emit_csv(rows: List[Dict[str, Any]], path: str, command: Optional[str] = None):
    """
    写出 CSV，首行为 # 元数据注释，读取时用 pandas.read_csv(path, comment="#")

    Args:
        rows: run_sweep 返回的行
        path: 输出路径
        command: 写入元数据的命令行，默认取 sys.argv
    """
    df = pd.DataFrame(rows, columns=COLUMNS + EXTRA_COLUMNS + STAT_COLUMNS)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(metadata_line(command) + "\n")
            df.to_csv(f, index=False, float_format="%.6g")
    except OSError as e:
        raise OSError(f"无法写入 CSV 文件 {path}: {e}") from e


@dataclass
class VerifyCheck:
    engine: str
    threads: int
    passed: bool
    message: str
    divergence: Optional[EventKey] = None


@dataclass
class VerifyReport:
    """verify 模式的结果"""
    reference: Optional[Fingerprint] = None
    checks: List[VerifyCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> List[str]:
        out = [f"顺序参考指纹: {self.reference.hex() if self.reference else '-'}"]
        for c in self.checks:
            mark = "通过" if c.passed else "失败"
            out.append(f"  [{mark}] {c.engine} 线程={c.threads}: {c.message}")
            if c.divergence is not None:
                out.append(f"      首个分歧键: {c.divergence}")
        return out


def verify_mode(spec: SweepSpec, topology: Optional[Topology] = None,
                event_order: Optional[EventOrder] = None) -> VerifyReport:
    """
    先运行顺序参考，再用每个并行引擎在每个线程数下运行，比较指纹和提交数

    Args:
        spec: 扫描描述，必须设置事件预算；engine 为 seq 时检查两个并行引擎
        topology: 机器拓扑
        event_order: 保守引擎窗口内事件顺序钩子 (负面对照用)

    Returns:
        VerifyReport
    """
    if spec.events is None:
        raise UsageError("verify 模式需要事件预算 (--events)")
    topology = topology or discover()
    _check_capacity(spec.threads, topology)
    workload = WorkloadConfig(spec.workload.model, spec.workload.load, spec.workload.balance,
                              spec.workload.scale, spec.seed, dict(spec.workload.params))
    stop = StopCondition(events=spec.events)
    reference = run_engine("seq", build_model(workload), 1, topology, stop, record_trace=True)
    report = VerifyReport(reference.fingerprint)
    engines = ["conservative", "optimistic"] if spec.engine == "seq" else [spec.engine]
    for engine in engines:
        for threads in spec.threads:
            model = build_model(workload)
            if engine == "conservative" and not model.lookahead > 0:
                report.checks.append(VerifyCheck(engine, threads, True, "零前瞻模型，跳过保守引擎"))
                continue
            result = run_engine(engine, model, threads, topology, stop, spec.placement,
                                record_trace=True, options=spec.engine_options.get(engine, {}),
                                event_order=event_order if engine == "conservative" else None)
            report.checks.append(_compare(reference, result))
    return report


def _compare(reference: EngineResult, result: EngineResult) -> VerifyCheck:
    m = result.metrics
    problems = []
    if result.fingerprint != reference.fingerprint:
        problems.append(f"指纹 {result.fingerprint.hex()} != {reference.fingerprint.hex()}")
    if m.committed_events != reference.metrics.committed_events:
        problems.append(f"提交数 {m.committed_events} != {reference.metrics.committed_events}")
    if m.committed_events > m.processed_events:
        problems.append(f"提交数 {m.committed_events} 超过处理数 {m.processed_events}")
    if result.engine == "conservative" and m.rollbacks != 0:
        problems.append(f"保守引擎出现回滚 {m.rollbacks}")
    if result.engine == "optimistic" and result.threads == 1 and m.rollbacks != 0:
        problems.append(f"单线程乐观引擎出现回滚 {m.rollbacks}")
    divergence = None
    if problems:
        divergence = first_divergence(reference.traces, result.traces)
        return VerifyCheck(result.engine, result.threads, False, "; ".join(problems), divergence)
    return VerifyCheck(result.engine, result.threads, True,
                       f"指纹 {result.fingerprint.hex()}, 提交 {m.committed_events}, 回滚 {m.rollbacks}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(f"线程数列表无效: {text}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bench", description="PDES 引擎基准测试")
    parser.add_argument("--engine", default="seq", help="seq / conservative / optimistic")
    parser.add_argument("--model", default="pcs", choices=MODELS)
    parser.add_argument("--load", default="light", choices=LOADS)
    parser.add_argument("--balance", default="balanced", choices=BALANCES)
    parser.add_argument("--threads", type=_int_list, default=None, help="逗号分隔的线程数列表")
    parser.add_argument("--samples", type=int, default=None)
    parser.add_argument("--duration-s", type=float, default=None)
    parser.add_argument("--events", type=int, default=None, help="事件预算 (确定性模式)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--placement", default=None, choices=("auto",) + POLICIES)
    parser.add_argument("--scale", type=float, default=None, help="相对论文规模的比例 (0, 1]")
    parser.add_argument("--topology-file", default=None)
    parser.add_argument("--out", default=None, help="CSV 输出路径")
    parser.add_argument("--config", default="bench_config.json")
    parser.add_argument("--verify", action="store_true", help="对照顺序引擎检查指纹")
    parser.add_argument("--verbose", action="store_true")
    return parser


def spec_from_args(args: argparse.Namespace, config: ConfigManager) -> SweepSpec:
    """命令行参数覆盖配置文件中的扫描默认值"""
    sweep = config.section("sweep")

    def pick(value, key):
        return sweep.get(key) if value is None else value

    scale = pick(args.scale, "scale")
    workload = WorkloadConfig(args.model, args.load, args.balance,
                              None if scale is None else float(scale),
                              int(pick(args.seed, "seed")), config.model_params(args.model))
    engine = ENGINE_ALIASES.get(args.engine, args.engine)
    threads = args.threads if args.threads is not None else list(sweep.get("threads", [1]))
    if engine == "seq" and args.threads is None:
        threads = [1]
    return SweepSpec(
        engine=engine,
        workload=workload,
        threads=threads,
        samples=int(pick(args.samples, "samples")),
        duration_s=float(pick(args.duration_s, "duration_s")),
        events=args.events,
        seed=workload.seed,
        placement=pick(args.placement, "placement"),
        out=args.out,
        warmup_fraction=float(sweep.get("warmup_fraction", 0.05)),
        engine_options={e: config.engine_options(e) for e in ("conservative", "optimistic")},
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令行入口

    Returns:
        退出码: 0 成功, 1 用法错误, 2 校验失败, 3 容量或 I/O 错误
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"参数错误: {e}")
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = ConfigManager(args.config)
        spec = spec_from_args(args, config)
        topology = load_topology(args.topology_file) if args.topology_file else discover()
        print(f"拓扑: {topology.summary()}")
        if args.verify:
            print(f"开始校验: {spec.engine} {spec.workload.model}-{spec.workload.load} "
                  f"线程 {spec.threads}, 事件预算 {spec.events}")
            report = verify_mode(spec, topology)
            for line in report.lines():
                print(line)
            if not report.passed:
                print("校验失败")
                return EXIT_VERIFY
            print("校验通过")
            return EXIT_OK
        mode = f"事件预算 {spec.events}" if spec.events else f"每次 {spec.duration_s:g} 秒"
        print(f"开始运行: {spec.engine} {spec.workload.model}-{spec.workload.load}-"
              f"{spec.workload.balance}, 线程 {spec.threads}, {spec.samples} 个样本, {mode}")
        rows = run_sweep(spec, topology, progress=print)
        if spec.out:
            emit_csv(rows, spec.out)
            print(f"结果已保存到: {spec.out}")
        else:
            for row in rows:
                if row["sample"] == "summary":
                    print(f"  汇总 线程={row['threads']}: 提交 {row['committed_eps_mean']:.0f}"
                          f"±{row['committed_eps_std']:.0f} ev/s, "
                          f"总计 {row['total_eps_mean']:.0f}±{row['total_eps_std']:.0f} ev/s")
        return EXIT_OK
    except (UsageError, ConfigError) as e:
        print(f"参数错误: {e}")
        return EXIT_USAGE
    except (CapacityError, OSError) as e:
        print(f"容量或 I/O 错误: {e}")
        return EXIT_CAPACITY
    except PdesError as e:
        print(f"运行失败: {e}")
        return EXIT_VERIFY if args.verify else EXIT_USAGE
    except KeyboardInterrupt:
        print("\n已中断")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
