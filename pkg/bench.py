"""
PDES 基准平台 - 主入口
带参数时等同于 python -m srv.bench_cli；不带参数时进入菜单
"""

import os
import subprocess
import sys

from srv.bench_cli import main as bench_main
from srv.topology import discover, get_platform_info, machine_cpus


def clear_screen():
    """清屏函数"""
    os.system('cls' if os.name == 'nt' else 'clear')


def show_main_menu():
    """显示主菜单"""
    clear_screen()
    print("=" * 60)
    print("           PDES 引擎基准平台")
    print("=" * 60)
    print()
    print("主菜单:")
    print()
    print("  基准测试")
    print("    1. 快速吞吐量测试")
    print("    2. 对照顺序引擎校验")
    print()
    print("  环境信息")
    print("    3. 硬件拓扑概览")
    print("    4. 基准配置概览")
    print()
    print("  测试工具")
    print("    5. 运行单元测试")
    print()
    print("    0. 退出程序")
    print()


def _ask(prompt: str, default: str) -> str:
    value = input(f"{prompt} [{default}]: ").strip()
    return value or default


def quick_benchmark():
    """按提示组装参数后运行一次扫描"""
    clear_screen()
    print("=" * 50)
    print("         快速吞吐量测试")
    print("=" * 50)
    try:
        engine = _ask("引擎 (seq/conservative/optimistic)", "conservative")
        model = _ask("模型 (pcs/highway/phold)", "pcs")
        load = _ask("负载 (light/medium/heavy)", "light")
        threads = _ask("线程数列表", "1" if engine == "seq" else "1,2")
        duration = _ask("每次运行秒数", "2")
        samples = _ask("样本数", "3")
        out = _ask("CSV 输出路径 (留空则只打印)", "")
    except KeyboardInterrupt:
        print("\n返回主菜单")
        return
    argv = ["--engine", engine, "--model", model, "--load", load, "--threads", threads,
            "--duration-s", duration, "--samples", samples]
    if out:
        argv += ["--out", out]
    code = bench_main(argv)
    print(f"\n运行结束，退出码: {code}")
    input("\n按回车键返回主菜单...")


def quick_verify():
    """用事件预算模式对照顺序引擎"""
    clear_screen()
    print("=" * 50)
    print("         对照顺序引擎校验")
    print("=" * 50)
    try:
        model = _ask("模型 (pcs/highway/phold)", "pcs")
        threads = _ask("线程数列表", "1,2")
        events = _ask("事件预算", "20000")
    except KeyboardInterrupt:
        print("\n返回主菜单")
        return
    code = bench_main(["--verify", "--model", model, "--threads", threads, "--events", events])
    print(f"\n校验结束，退出码: {code}")
    input("\n按回车键返回主菜单...")


def show_topology():
    """显示硬件拓扑"""
    clear_screen()
    print("=" * 50)
    print("         硬件拓扑概览")
    print("=" * 50)
    info = get_platform_info()
    print(f"系统: {info['system']} {info['machine']}")
    print(f"Python: {info['implementation']} {info['python']} (优化标志 {info['optimize']})")
    print(f"可用逻辑 CPU: {machine_cpus()}")
    topology = discover()
    print(topology.summary())
    for node in topology.nodes:
        print(f"  节点 {node.node_id}: {len(node.cores)} 个核, CPU {node.cpus}")
    input("\n按回车键返回主菜单...")


def show_config():
    """显示基准配置"""
    clear_screen()
    try:
        from srv.config_manager import ConfigManager
        ConfigManager().show_config_summary()
    except Exception as e:
        print(f"无法加载配置: {e}")
    input("\n按回车键返回主菜单...")


def run_tests():
    """用当前解释器运行 pytest"""
    clear_screen()
    print("启动单元测试...")
    print("-" * 40)
    try:
        result = subprocess.run([sys.executable, "-m", "pytest", "-q"], capture_output=False, text=True)
        if result.returncode != 0:
            print(f"\n测试结束，返回码: {result.returncode}")
    except KeyboardInterrupt:
        print("\n\n测试被用户中断")
    input("\n按回车键返回主菜单...")


def menu():
    """菜单循环"""
    actions = {
        "1": quick_benchmark,
        "2": quick_verify,
        "3": show_topology,
        "4": show_config,
        "5": run_tests,
    }
    try:
        while True:
            show_main_menu()
            try:
                choice = input("请选择操作 (0-5): ").strip()
                if choice == "0":
                    print("\n再见！")
                    break
                action = actions.get(choice)
                if action is None:
                    print("无效选择，请输入 0-5")
                    input("\n按回车键继续...")
                    continue
                action()
            except KeyboardInterrupt:
                choice = input("\n\n确定要退出吗? (y/n): ").strip().lower()
                if choice in ['y', 'yes', '是']:
                    break
    except KeyboardInterrupt:
        print("\n\n再见！")


def main():
    """主函数"""
    if len(sys.argv) > 1:
        sys.exit(bench_main(sys.argv[1:]))
    menu()


if __name__ == "__main__":
    main()
