# app.py
"""命令列入口：run / detect / benchmark / minimize"""
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from config import PRESETS, CampaignConfig, load_config
from fitness.classes import EquivalenceClass
from fitness.hw_backend import detect_platform, identify_platform
from system import build_backend, load_report, minimize, reproducer_from_report, run_campaign
from utils.catalog import load_catalog
from utils.convergence import benchmark as run_benchmark
from utils.encoding import encode_sequence, render_sequence
from utils.errors import SpecSwarmError
from utils.platform_checker import PlatformChecker

console = Console()

def setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )

def collect_overrides(backend, preset, seed, extensions, profile, out) -> Dict[str, Any]:
    """把命令列參數轉成設定覆寫值 (未指定者不覆寫)"""
    overrides: Dict[str, Any] = {}
    if backend:
        overrides["backend"] = backend
    if preset:
        overrides["variant_preset"] = preset
    if seed is not None:
        overrides["seed"] = seed
    if extensions:
        overrides["extensions"] = [tag.strip() for tag in extensions.split(",") if tag.strip()]
    if profile:
        overrides["profile"] = profile
    if out:
        overrides["output_dir"] = out
    return overrides

def campaign_options(command):
    """run 與 benchmark 共用的設定參數"""
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML/JSON 設定檔"),
        click.option("--backend", type=click.Choice(["sim", "hw"]), help="適應度後端"),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), help="(β, γ) 組合名稱"),
        click.option("--seed", type=int, help="亂數種子"),
        click.option("--extensions", help="以逗號分隔的指令集擴充，例如 SSE2,AVX"),
        click.option("--profile", help="模擬預言機的處理器世代"),
        click.option("--out", type=click.Path(file_okay=False), help="輸出目錄"),
    ]
    for option in reversed(options):
        command = option(command)
    return command

def fail(e: Exception):
    console.print(f"[bold red]錯誤：[/bold red]{escape(str(e))}")
    sys.exit(1)

@click.group()
@click.option("--verbose", "-v", is_flag=True, help="顯示 DEBUG 層級日誌")
def cli(verbose: bool):
    """以粒子群搜尋觸發 bad speculation 的 x86 指令序列"""
    setup_logging(verbose)

@cli.command()
@campaign_options
def run(config_path, backend, preset, seed, extensions, profile, out):
    """執行完整搜尋活動並寫出報告"""
    try:
        cfg = load_config(config_path, collect_overrides(backend, preset, seed, extensions, profile, out))
        report = asyncio.run(run_campaign(cfg))
    except SpecSwarmError as e:
        fail(e)

    table = Table(title=f"{report.backend} / {report.profile}：{report.total_evaluations} 次評估")
    table.add_column("等價類")
    table.add_column("首次命中", justify="right")
    table.add_column("最佳適應度", justify="right")
    table.add_column("重現序列長度", justify="right")
    for label, discovery in report.classes.items():
        length = str(len(discovery.reproducer_codes)) if discovery.reproducer_codes else "-"
        table.add_row(label, str(discovery.first_hit_eval), f"{discovery.best_fitness:.3f}", length)
    console.print(table)
    console.print(f"報告已寫入 {Path(cfg.output_dir).resolve()}")

@cli.command()
@click.option("--cpuinfo", type=click.Path(exists=True, dir_okay=False), default="/proc/cpuinfo")
def detect(cpuinfo):
    """顯示處理器世代判定與工具鏈狀態"""
    info = identify_platform(Path(cpuinfo).read_text(encoding="utf-8", errors="replace"))
    console.print(f"[bold]CPU[/bold]: {info.model_name or '未知'} ({info.vendor}, family {info.family}, "
                  f"model 0x{max(info.model, 0):02X})")
    console.print(f"[bold]Profile[/bold]: {detect_platform(cpuinfo) or '不支援'}")
    if info.profile and info.name_profile and not info.agrees:
        console.print(f"[yellow]型號字串判定為 {info.name_profile}，與 CPUID 不一致[/yellow]")

    checker = PlatformChecker()
    statuses = asyncio.run(checker.check_all())
    table = Table(title="工具鏈")
    table.add_column("工具")
    table.add_column("狀態")
    table.add_column("說明")
    for status in statuses.values():
        mark = "[green]✓[/green]" if status.available else "[red]✗[/red]"
        table.add_row(status.name, mark, status.detail)
    console.print(table)
    ready, message = asyncio.run(checker.ready())
    console.print("[green]硬體後端可用[/green]" if ready else f"[red]硬體後端不可用[/red]\n{message}")

@cli.command()
@campaign_options
@click.option("--presets", default=",".join(PRESETS), show_default=True, help="以逗號分隔的組合名稱")
@click.option("--seeds", default=10, show_default=True, help="每個組合的種子數 (0 起算)")
@click.option("--target", "targets", multiple=True, default=["MACHINE_CLEARS.SMC"], show_default=True,
              help="目標等價類 (事件名稱)")
@click.option("--budget", default=2000, show_default=True, help="每次執行的評估預算")
def benchmark(config_path, backend, preset, seed, extensions, profile, out, presets, seeds, targets, budget):
    """在模擬預言機上比較各組合第一次命中目標所需的評估次數"""
    try:
        overrides = collect_overrides(backend, preset, seed, extensions, profile, out)
        overrides["max_evaluations"] = budget
        cfg = load_config(config_path, overrides)
        labels = [EquivalenceClass.parse(t).label for t in targets]
        names = [name.strip() for name in presets.split(",") if name.strip()]
        unknown = [name for name in names if name not in PRESETS]
        if unknown:
            raise click.BadParameter(f"unknown presets: {', '.join(unknown)}", param_hint="--presets")
        result = asyncio.run(run_benchmark(cfg, names, list(range(seeds)), labels))
    except (SpecSwarmError, ValueError) as e:
        fail(e)

    table = Table(title=f"第一次命中 {', '.join(labels)} 的評估次數 (預算 {budget})")
    table.add_column("組合")
    table.add_column("中位數", justify="right")
    table.add_column("95% 信賴區間", justify="right")
    table.add_column("命中", justify="right")
    for name, runs in result.runs.items():
        low, high = runs.median_interval()
        table.add_row(name, f"{runs.median:.1f}", f"[{low:.1f}, {high:.1f}]", f"{runs.hits}/{len(runs.seeds)}")
    console.print(table)
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "benchmark.json").write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")

@cli.command(name="minimize")
@click.argument("report_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--class", "cls_name", required=True, help="等價類 (事件名稱或成員名稱)")
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), help="覆寫報告中記錄的目錄檔")
def minimize_command(report_path, cls_name, catalog: Optional[str]):
    """重新最小化報告中某一類別的重現序列"""
    try:
        report = load_report(report_path)
        cfg = CampaignConfig.model_validate(report.config)
        if catalog:
            cfg = cfg.model_copy(update={"catalog": Path(catalog)})
        cls = EquivalenceClass.parse(cls_name)
        seq = reproducer_from_report(report, cls, load_catalog(cfg.catalog))
        backend = build_backend(cfg)
        backend.calibrate_baseline(cfg.calibration.baseline_samples, reps=cfg.reps,
                                   k=cfg.calibration.threshold_sigma, env=cfg.environment)
        reduced = minimize(seq, backend, cls, cfg.environment, cfg.reps)
    except (SpecSwarmError, ValueError) as e:
        fail(e)

    console.print(f"{cls.label}: {len(seq)} → {len(reduced)} 條指令")
    console.print(render_sequence(reduced), markup=False)
    console.print(json.dumps([list(code) for code in encode_sequence(reduced)]), markup=False)

if __name__ == "__main__":
    cli()
