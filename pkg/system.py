# system.py
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from config import CampaignConfig
from fitness.base_backend import FitnessBackend
from fitness.classes import ALL_CLASSES, EquivalenceClass
from fitness.hw_backend import HardwareBackend, emit_kernel
from fitness.oracle_rules import DEFAULT_RULES, DataEnvironment, describe_rules, load_rule_overrides
from fitness.sim_backend import SimulatedBackend
from swarm.coordinator import form_subswarms, summarize
from swarm.particle import Swarm, initialize_swarm
from swarm.phases import EvaluationRecord, Evaluator, IterationHook, cognitive_phase, mixed_phase
from utils.catalog import Catalog, InstructionInstance, InstructionPool, build_pool, load_catalog
from utils.encoding import PositionCode, decode_sequence, encode_sequence, render_sequence
from utils.errors import (
    BackendUnavailableError,
    KernelEmissionError,
    MinimizationError,
    ReportError,
    SpecSwarmError,
)
from utils.evaluation_log import EvaluationLog
from utils.platform_checker import PlatformChecker

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
LOG_FILE = "evaluations.jsonl"
# 最小化時重新評估使用的 nonce 區段
MINIMIZE_NONCE_BASE = 1 << 61


class ClassDiscovery(BaseModel):
    """單一等價類的發現結果"""
    model_config = ConfigDict(extra="forbid")

    cls: str
    first_hit_eval: int
    first_hit_seconds: float
    best_fitness: float
    reproducer_asm: Optional[str] = None
    reproducer_codes: Optional[List[Tuple[int, int]]] = None
    source_length: int = 0
    trace: Optional[List[Dict[str, Any]]] = None


class CampaignReport(BaseModel):
    """活動報告 (report.json)"""
    model_config = ConfigDict(extra="forbid")

    classes: Dict[str, ClassDiscovery]
    total_evaluations: int
    wall_seconds: float
    backend: str
    profile: str
    catalog_digest: str
    thresholds: Dict[str, float]
    rule_metadata: List[Dict[str, Any]]
    config: Dict[str, Any]


def build_backend(cfg: CampaignConfig) -> FitnessBackend:
    """依設定建立適應度後端"""
    if cfg.backend == "sim":
        rules = load_rule_overrides(cfg.sim.rule_overrides) if cfg.sim.rule_overrides else DEFAULT_RULES
        return SimulatedBackend(cfg.profile, cfg.sim.noise_lambda, cfg.sim.noise_seed, rules)
    hw = cfg.hardware
    return HardwareBackend(
        counter_map=hw.counter_map,
        output_dir=cfg.output_dir,
        core=hw.core,
        timeout=hw.timeout_seconds,
        assembler=hw.assembler,
        linker=hw.linker,
        perf=hw.perf,
    )


def minimize(seq: Sequence[InstructionInstance], backend: FitnessBackend, cls: EquivalenceClass,
             env: Optional[DataEnvironment] = None, reps: int = 1) -> List[InstructionInstance]:
    """
    確定性的貪婪最小化

    依索引順序嘗試刪除每條指令，保留仍觸發 cls 的刪除，直到不動點

    Args:
        seq: 觸發 cls 的序列
        backend: 適應度後端
        cls: 目標等價類
        env: 資料預置狀態
        reps: 重複次數

    Returns:
        1-minimal 的序列 (刪除任何一條指令都不再觸發)
    """
    env = env or DataEnvironment()
    nonce = MINIMIZE_NONCE_BASE

    def fires(candidate: Sequence[InstructionInstance]) -> bool:
        nonlocal nonce
        nonce += 1
        return bool(backend.evaluate(candidate, reps, env, nonce).fired.get(cls, False))

    if not fires(seq):
        raise MinimizationError(f"sequence does not fire {cls.label}")

    current = list(seq)
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(current):
            candidate = current[:i] + current[i + 1:]
            if candidate and fires(candidate):
                current = candidate
                changed = True
            else:
                i += 1
    return current


def emit_report(report: CampaignReport, cfg: CampaignConfig, log: Optional[EvaluationLog] = None) -> Dict[str, Path]:
    """
    將報告、每類別的重現 .s 檔與評估記錄寫到輸出目錄

    Returns:
        名稱 → 檔案路徑
    """
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths: Dict[str, Path] = {}
        for label, discovery in report.classes.items():
            if discovery.reproducer_asm is None:
                continue
            path = out / f"{label}.s"
            path.write_text(discovery.reproducer_asm, encoding="utf-8")
            paths[label] = path
        if log is not None:
            log_path = out / LOG_FILE
            if log.path is None or log.path.resolve() != log_path.resolve():
                log.write(log_path)
            paths["log"] = log_path
        report_path = out / REPORT_FILE
        report_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        paths["report"] = report_path
    except OSError as e:
        raise ReportError(f"output directory not writable: {out} ({e})") from e
    logger.info("Report written to %s", report_path)
    return paths


def load_report(path: Union[str, Path]) -> CampaignReport:
    try:
        return CampaignReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise ReportError(f"cannot load report {path}: {e}") from e


class CampaignSystem:
    """搜尋活動主類：擁有目錄、指令池、後端、粒子群與評估記錄"""

    def __init__(self, cfg: CampaignConfig, stream_log: bool = True):
        """
        初始化活動

        Args:
            cfg: 活動設定
            stream_log: 是否邊評估邊寫入輸出目錄的 JSONL 記錄
        """
        self.cfg = cfg
        self.stream_log = stream_log
        self.catalog: Optional[Catalog] = None
        self.pool: Optional[InstructionPool] = None
        self.backend: Optional[FitnessBackend] = None
        self.swarm: Optional[Swarm] = None
        self.evaluator: Optional[Evaluator] = None
        self.log = EvaluationLog()
        self.env = cfg.environment
        self.first_hit_seconds: Dict[EquivalenceClass, float] = {}
        self.best_records: Dict[EquivalenceClass, EvaluationRecord] = {}
        self.first_records: Dict[EquivalenceClass, EvaluationRecord] = {}
        self.on_iteration: Optional[IterationHook] = None
        self._started = 0.0
        self.is_setup = False

    async def setup(self):
        """讀取目錄、建立指令池並確認後端可用"""
        if self.is_setup:
            return
        if self.cfg.backend == "hw":
            ready, message = await PlatformChecker(
                self.cfg.hardware.assembler, self.cfg.hardware.linker, self.cfg.hardware.perf
            ).ready()
            if not ready:
                raise BackendUnavailableError(message)
        self.catalog = load_catalog(self.cfg.catalog)
        self.pool = build_pool(self.catalog, self.cfg.extensions)
        logger.info("Instruction pool: %d specs from %s", len(self.pool), ", ".join(sorted(self.pool.extensions)))
        self.backend = build_backend(self.cfg)
        self.is_setup = True

    def _record(self, record: EvaluationRecord):
        self.log.add(record)
        if record.cls is None:
            return
        if record.cls not in self.first_records:
            self.first_records[record.cls] = record
            self.first_hit_seconds[record.cls] = time.monotonic() - self._started
            logger.info("First hit for %s at evaluation %d", record.cls.label, record.eval)
        best = self.best_records.get(record.cls)
        if best is None or record.fitness > best.fitness:
            self.best_records[record.cls] = record

    async def search(self) -> Swarm:
        """執行 初始化 → 校正 → 認知階段 → 分群 → 混合階段"""
        await self.setup()
        cfg = self.cfg
        self._started = time.monotonic()
        if self.stream_log:
            self.log = EvaluationLog(Path(cfg.output_dir) / LOG_FILE)

        rng = np.random.default_rng(cfg.seed)
        self.swarm = initialize_swarm(self.pool, cfg.hp, rng)
        logger.info("Swarm initialized: N=%d, n=%d", cfg.hp.N, cfg.hp.n)

        self.backend.calibrate_baseline(cfg.calibration.baseline_samples, reps=cfg.reps,
                                        k=cfg.calibration.threshold_sigma, env=self.env)
        self.evaluator = Evaluator(self.backend, cfg.reps, self.env, on_evaluation=self._record,
                                   max_evaluations=cfg.max_evaluations, max_wall_seconds=cfg.max_wall_seconds)
        try:
            await cognitive_phase(self.swarm, self.evaluator, cfg.hp, self.on_iteration)
            subswarms = form_subswarms(self.swarm)
            logger.info("Sub-swarms formed: %s", summarize(subswarms))
            await mixed_phase(self.swarm, subswarms, self.evaluator, cfg.hp, self.on_iteration)
        finally:
            self.log.close()
        return self.swarm

    def _reproducer_source(self, cls: EquivalenceClass) -> List[InstructionInstance]:
        """該類別個人最佳最高的粒子；沒有粒子歸在此類時使用最佳評估紀錄"""
        members = [p for p in self.swarm.particles if p.assigned_class is cls]
        if members:
            leader = max(members, key=lambda p: (p.best_fitness, -p.index))
            return leader.best_instances(self.pool)
        return decode_sequence(self.best_records[cls].codes, self.pool)

    def discover(self, cls: EquivalenceClass) -> ClassDiscovery:
        first = self.first_records[cls]
        discovery = ClassDiscovery(
            cls=cls.label,
            first_hit_eval=first.eval,
            first_hit_seconds=self.first_hit_seconds[cls],
            best_fitness=self.best_records[cls].fitness,
        )
        source = self._reproducer_source(cls)
        try:
            reproducer = minimize(source, self.backend, cls, self.env, self.cfg.reps)
        except MinimizationError as e:
            logger.warning("No reproducer for %s: %s", cls.label, e)
            return discovery
        header = [f"# {cls.label} reproducer ({len(reproducer)} of {len(source)} instructions)"]
        header += [f"#   {line}" for line in render_sequence(reproducer).splitlines()]
        try:
            body = emit_kernel(reproducer, 1, self.env).assembly_text
        except KernelEmissionError as e:
            logger.warning("Reproducer for %s is not a standalone kernel: %s", cls.label, e)
            body = render_sequence(reproducer) + "\n"
        trace = None
        if isinstance(self.backend, SimulatedBackend):
            trace = self.backend.trace(reproducer, self.env).to_dict()
        return discovery.model_copy(update={
            "reproducer_asm": "\n".join(header) + "\n" + body,
            "reproducer_codes": [tuple(code) for code in encode_sequence(reproducer)],
            "source_length": len(source),
            "trace": trace,
        })

    async def run_campaign(self) -> CampaignReport:
        """
        執行完整活動並產生報告

        Returns:
            CampaignReport (尚未寫檔，見 emit_report)
        """
        await self.search()
        classes = {}
        for cls in ALL_CLASSES:
            if cls in self.first_records:
                classes[cls.label] = self.discover(cls)
        rules = self.backend.profile.rules if isinstance(self.backend, SimulatedBackend) else DEFAULT_RULES
        return CampaignReport(
            classes=classes,
            total_evaluations=self.evaluator.count,
            wall_seconds=time.monotonic() - self._started,
            backend=self.cfg.backend,
            profile=self.backend.microarch_profile,
            catalog_digest=self.catalog.digest,
            thresholds={c.label: t for c, t in self.backend.baseline.thresholds.items()},
            rule_metadata=describe_rules(rules),
            config=self.cfg.echo(),
        )


async def run_campaign(cfg: CampaignConfig, write: bool = True) -> CampaignReport:
    """執行活動；write 為 True 時同時寫出報告檔"""
    system = CampaignSystem(cfg, stream_log=write)
    report = await system.run_campaign()
    if write:
        emit_report(report, cfg, system.log)
    return report


def reproducer_from_report(report: CampaignReport, cls: EquivalenceClass,
                           catalog: Catalog) -> List[InstructionInstance]:
    discovery = report.classes.get(cls.label)
    if discovery is None or discovery.reproducer_codes is None:
        raise SpecSwarmError(f"report has no reproducer for {cls.label}")
    return decode_sequence([PositionCode(*code) for code in discovery.reproducer_codes], catalog)
