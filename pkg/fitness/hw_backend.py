# hw_backend.py
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import psutil
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.catalog import GPR64_NAMES, Attribute, InstructionInstance, OperandKind
from utils.encoding import SCRATCH_BASE_REGISTER, render_instance
from utils.errors import BackendUnavailableError, ConfigError, KernelEmissionError
from utils.kernel_executor import KERNEL_EXIT_STATUS, KernelExecutor, PerfEvent, pmu_name

from .base_backend import FitnessBackend
from .classes import ALL_CLASSES, EquivalenceClass
from .oracle_rules import PROFILE_IDS, DataEnvironment

logger = logging.getLogger(__name__)

# 指數為 0、尾數非 0：同時是 float32 與 float64 的 denormal
DENORMAL_PATTERN = 0x0000000100000001
SCRATCH_BYTES = 1024
ENTRY_SYMBOL = "_start"

# family 6 的 model 編號
_MODEL_PROFILES = {
    0x97: "alder_lake", 0x9A: "alder_lake",
    0x8F: "sapphire_rapids",
    0xA5: "comet_lake", 0xA6: "comet_lake",
    0x6A: "ice_lake", 0x6C: "ice_lake",
}
_NAME_PATTERNS = (
    (re.compile(r"12th Gen Intel|Core\(TM\) i[3579]-12\d{3}"), "alder_lake"),
    (re.compile(r"10th Gen Intel|Core\(TM\) i[3579]-10\d{3}"), "comet_lake"),
    (re.compile(r"Xeon\(R\).*\b[3-9]4\d{2}[A-Z+]*\b"), "sapphire_rapids"),
    (re.compile(r"Xeon\(R\).*\b[3-9]3\d{2}[A-Z+]*\b"), "ice_lake"),
)
AVX512_PROFILES = frozenset({"sapphire_rapids", "ice_lake"})


@dataclass(frozen=True)
class PlatformInfo:
    vendor: str
    family: int
    model: int
    model_name: str
    profile: Optional[str]
    name_profile: Optional[str]

    @property
    def agrees(self) -> bool:
        """CPUID family/model 與型號字串兩條判定路徑是否一致"""
        return self.profile == self.name_profile


def identify_platform(cpuinfo: str) -> PlatformInfo:
    """
    解析 /proc/cpuinfo 的第一個處理器區段

    Args:
        cpuinfo: 檔案內容

    Returns:
        PlatformInfo；非 Intel family 6 或未知 model 時 profile 為 None
    """
    fields: Dict[str, str] = {}
    for line in cpuinfo.splitlines():
        if not line.strip():
            if fields:
                break
            continue
        key, _, value = line.partition(":")
        fields.setdefault(key.strip(), value.strip())

    vendor = fields.get("vendor_id", "")
    try:
        family = int(fields.get("cpu family", "-1"))
        model = int(fields.get("model", "-1"))
    except ValueError:
        family, model = -1, -1
    model_name = fields.get("model name", "")

    profile = _MODEL_PROFILES.get(model) if vendor == "GenuineIntel" and family == 6 else None
    name_profile = None
    if "Intel" in model_name:
        for pattern, candidate in _NAME_PATTERNS:
            if pattern.search(model_name):
                name_profile = candidate
                break
    return PlatformInfo(vendor, family, model, model_name, profile, name_profile)


def detect_platform(cpuinfo_path: Union[str, Path] = "/proc/cpuinfo") -> Optional[str]:
    """回傳目前 CPU 對應的 profile 名稱，不支援時回傳 None"""
    try:
        text = Path(cpuinfo_path).read_text(encoding="utf-8", errors="replace")
    except OSError:
        return None
    info = identify_platform(text)
    if info.profile and info.name_profile and not info.agrees:
        logger.warning(
            "CPU model 0x%02X maps to %s but model name %r suggests %s",
            info.model, info.profile, info.model_name, info.name_profile,
        )
    return info.profile


class CounterEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    event: int = Field(ge=0, le=0xFF)
    umask: int = Field(ge=0, le=0xFF)


@dataclass(frozen=True)
class CounterMap:
    """每個等價類對應的原始事件；None 表示該世代不支援"""
    microarch: str
    events: Mapping[EquivalenceClass, Optional[Tuple[int, int]]]

    @property
    def supported(self) -> Tuple[EquivalenceClass, ...]:
        return tuple(c for c in ALL_CLASSES if self.events.get(c) is not None)

    def perf_events(self) -> Tuple[PerfEvent, ...]:
        return tuple(
            PerfEvent(name=perf_event_name(c), event=self.events[c][0], umask=self.events[c][1])
            for c in self.supported
        )


def perf_event_name(cls: EquivalenceClass) -> str:
    # perf 的 name= 不接受 '.'
    return cls.label.replace(".", "__")


def load_counter_map(path: Union[str, Path], microarch: str) -> CounterMap:
    """
    讀取計數器對應檔 (YAML，以世代名稱為鍵，值為事件名稱 → {event, umask} 或 null)

    Args:
        path: 檔案路徑
        microarch: 世代名稱

    Returns:
        CounterMap；九個類別都必須出現 (不支援者寫 null)
    """
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read counter map {path}: {e}", field="counter_map") from e
    if microarch not in document:
        raise ConfigError(f"counter map has no entry for {microarch}", field=f"counter_map.{microarch}")

    section = document[microarch] or {}
    events: Dict[EquivalenceClass, Optional[Tuple[int, int]]] = {}
    for cls in ALL_CLASSES:
        if cls.label not in section:
            raise ConfigError(f"counter map for {microarch} does not list {cls.label}",
                              field=f"counter_map.{microarch}.{cls.label}")
        raw = section[cls.label]
        if raw is None:
            events[cls] = None
            continue
        try:
            entry = CounterEntry.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"invalid event encoding for {cls.label}: {e}",
                              field=f"counter_map.{microarch}.{cls.label}") from e
        events[cls] = (entry.event, entry.umask)
    return CounterMap(microarch, MappingProxyType(events))


@dataclass(frozen=True)
class KernelArtifact:
    assembly_text: str
    entry: str
    reps: int
    groomed_registers: Tuple[int, ...]
    body_lines: int


_PROTECTED_GPRS = frozenset({GPR64_NAMES.index("rsp"), GPR64_NAMES.index(SCRATCH_BASE_REGISTER)})


def _check_emittable(inst: InstructionInstance, profile: Optional[str]) -> None:
    for slot, value in zip(inst.spec.slots, inst.operands):
        if slot.kind in (OperandKind.ZMM, OperandKind.MASK) and profile is not None and profile not in AVX512_PROFILES:
            raise KernelEmissionError(f"{inst.spec.mnemonic} uses {slot.kind.value} operands unsupported on {profile}")
        if slot.kind is OperandKind.GPR64 and slot.writes and value in _PROTECTED_GPRS:
            raise KernelEmissionError(f"{inst.spec.mnemonic} would clobber {GPR64_NAMES[value]}")


def emit_kernel(seq: Sequence[InstructionInstance], reps: int, env: DataEnvironment,
                profile: Optional[str] = None) -> KernelArtifact:
    """
    產生一個可獨立執行的核心

    結構為：資料區 (denormal 樣式與 scratch 區)、prologue 預置暫存器、
    fence、重複 reps 次的序列本體、fence、epilogue 後以 exit(KERNEL_EXIT_STATUS) 系統呼叫結束

    Args:
        seq: 指令序列
        reps: 本體重複次數
        env: 資料預置狀態
        profile: 目標世代，用於拒絕不支援的運算元種類

    Returns:
        KernelArtifact；相同輸入產生位元組相同的組語
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for inst in seq:
        _check_emittable(inst, profile)

    groomed = tuple(sorted(env.denormal_registers))
    body = [render_instance(inst) for inst in seq]
    uses_vex = any(inst.spec.has(Attribute.IS_VEX_OR_EVEX) for inst in seq)

    lines = [
        "    .intel_syntax noprefix",
        "    .section .data",
        "    .balign 64",
        "denormal_pattern:",
    ]
    lines += [f"    .quad 0x{DENORMAL_PATTERN:016x}"] * 8
    lines += [
        "    .balign 64",
        "scratch:",
        f"    .fill {SCRATCH_BYTES}, 1, 0x{env.scratch_init:02x}",
        "",
        "    .text",
        f"    .globl {ENTRY_SYMBOL}",
        f"{ENTRY_SYMBOL}:",
        f"    lea {SCRATCH_BASE_REGISTER}, [rip + scratch]",
    ]
    lines += [f"    movups xmm{index}, xmmword ptr [rip + denormal_pattern]" for index in groomed]
    lines += ["    mfence", "    lfence"]
    for _ in range(reps):
        lines += [f"    {line}" for line in body]
    lines += ["    mfence", "    lfence"]
    if uses_vex:
        lines.append("    vzeroupper")
    lines += ["    mov eax, 60", f"    mov edi, {KERNEL_EXIT_STATUS}", "    syscall", ""]
    return KernelArtifact(
        assembly_text="\n".join(lines),
        entry=ENTRY_SYMBOL,
        reps=reps,
        groomed_registers=groomed,
        body_lines=reps * len(body),
    )


def run_kernel(kernel: KernelArtifact, cmap: CounterMap, executor: KernelExecutor,
               stem: Path) -> Optional[Dict[EquivalenceClass, float]]:
    """
    組譯並在計數器下執行核心

    Returns:
        每類別原始計數 (不支援的類別為 0)；核心出錯或逾時回傳 None
    """
    run, _ = executor.execute(kernel.assembly_text, stem, cmap.perf_events(), pmu_name())
    if not run.ok:
        logger.warning("Kernel %s faulted (rc=%d, signaled=%s, timeout=%s)",
                       stem.name, run.returncode, run.signaled, run.timed_out)
        return None
    counts: Dict[EquivalenceClass, float] = {}
    for cls in ALL_CLASSES:
        counts[cls] = float(run.counts.get(perf_event_name(cls), 0))
    return counts


class HardwareBackend(FitnessBackend):
    """真實硬體計數器後端 (不可重入，所有評估依序執行)"""

    name = "hw"
    reentrant = False
    min_calibration_samples = 30

    def __init__(self, counter_map: Union[str, Path], output_dir: Union[str, Path],
                 core: Optional[int] = None, timeout: float = 2.0,
                 assembler: str = "as", linker: str = "ld", perf: str = "perf",
                 profile: Optional[str] = None):
        detected = profile or detect_platform()
        if detected not in PROFILE_IDS:
            raise BackendUnavailableError("unsupported platform: hardware backend needs a known Intel profile")
        super().__init__(detected)
        self.counter_map = load_counter_map(counter_map, detected)
        for cls in ALL_CLASSES:
            if self.counter_map.events[cls] is None:
                logger.warning("%s is not supported on %s; it will always read 0", cls.label, detected)
        self.executor = KernelExecutor(assembler, linker, perf, timeout)
        self.kernel_dir = Path(output_dir) / "kernels"
        self.core = core
        if core is not None:
            self.pin(core)

    def pin(self, core: int) -> None:
        """將行程綁定到單一核心，子行程繼承此設定"""
        try:
            psutil.Process().cpu_affinity([core])
        except (ValueError, psutil.Error, AttributeError) as e:
            raise BackendUnavailableError(f"cannot pin to core {core}: {e}") from e
        logger.info("Pinned to core %d", core)

    def measure(self, seq: Sequence[InstructionInstance], reps: int, env: DataEnvironment,
                nonce: int = 0) -> Optional[Dict[EquivalenceClass, float]]:
        kernel = emit_kernel(seq, reps, env, self.microarch_profile)
        return run_kernel(kernel, self.counter_map, self.executor, self.kernel_dir / f"kernel_{nonce}")
