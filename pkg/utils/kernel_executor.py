# kernel_executor.py
import csv
import io
import logging
import os
import signal
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import BackendUnavailableError, KernelEmissionError

logger = logging.getLogger(__name__)

_PERMISSION_MARKERS = ("perf_event_paranoid", "Permission denied", "Access to performance monitoring")
# perf stat 以 psignal() 回報被訊號終止的工作負載
_SIGNAL_MARKERS = (
    "Segmentation fault", "Illegal instruction", "Floating point exception",
    "Bus error", "Aborted", "Killed", "Trace/breakpoint trap",
)
# 核心正常走到 epilogue 時的 exit 狀態，其他狀態一律視為出錯
KERNEL_EXIT_STATUS = 0x5A


@dataclass(frozen=True)
class PerfEvent:
    """一個 perf 原始事件 (event/umask) 與其輸出名稱"""
    name: str
    event: int
    umask: int

    def format(self, pmu: str = "cpu") -> str:
        return f"{pmu}/event=0x{self.event:02x},umask=0x{self.umask:02x},name={self.name}/u"


@dataclass(frozen=True)
class KernelRun:
    counts: Dict[str, int]
    returncode: int
    timed_out: bool = False
    signaled: bool = False

    @property
    def ok(self) -> bool:
        return self.returncode == KERNEL_EXIT_STATUS and not self.timed_out and not self.signaled


def pmu_name(sysfs_root: str = "/sys/devices") -> str:
    """混合架構 (例如 Alder Lake) 的大核 PMU 名稱為 cpu_core"""
    return "cpu_core" if Path(sysfs_root, "cpu_core").is_dir() else "cpu"


def parse_perf_csv(text: str) -> Dict[str, int]:
    """
    解析 perf stat -x, 的輸出

    Args:
        text: CSV 文字 (欄位: 計數, 單位, 事件名稱, ...)

    Returns:
        事件名稱 → 計數；<not counted>/<not supported> 的事件不列入
    """
    counts = {}
    for row in csv.reader(io.StringIO(text)):
        if len(row) < 3 or row[0].startswith("#"):
            continue
        value, event = row[0].strip(), row[2].strip()
        if not event or value.startswith("<"):
            continue
        try:
            counts[event] = int(float(value))
        except ValueError:
            continue
    return counts


def _kill_group(process: subprocess.Popen) -> None:
    try:
        os.killpg(process.pid, signal.SIGKILL)
    except ProcessLookupError:
        pass
    process.communicate()


class KernelExecutor:
    """組譯、連結並在 perf 計數下執行核心"""

    def __init__(self, assembler: str = "as", linker: str = "ld", perf: str = "perf", timeout: float = 2.0):
        """
        初始化執行器

        Args:
            assembler: 組譯器執行檔
            linker: 連結器執行檔
            perf: perf 執行檔
            timeout: 每個子行程的看門狗逾時 (秒)
        """
        self.assembler = assembler
        self.linker = linker
        self.perf = perf
        self.timeout = timeout

    def _run(self, command: List[str], tool: str, timeout: Optional[float] = None) -> subprocess.CompletedProcess:
        # 子行程放在獨立的 process group，逾時時整組一起終止
        try:
            process = subprocess.Popen(
                command,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                start_new_session=True,
            )
        except FileNotFoundError as e:
            raise BackendUnavailableError(f"{tool} missing: {command[0]} not found on PATH") from e
        except PermissionError as e:
            raise BackendUnavailableError(f"{tool} not executable: {e}") from e
        try:
            stdout, stderr = process.communicate(timeout=timeout or self.timeout)
        except subprocess.TimeoutExpired:
            _kill_group(process)
            raise
        return subprocess.CompletedProcess(command, process.returncode, stdout, stderr)

    def build(self, source: str, stem: Path) -> Path:
        """
        將組語原始碼寫到 stem.s，組譯並連結成靜態執行檔

        Returns:
            執行檔路徑
        """
        stem.parent.mkdir(parents=True, exist_ok=True)
        asm_path = stem.with_suffix(".s")
        obj_path = stem.with_suffix(".o")
        exe_path = stem.with_suffix("")
        asm_path.write_text(source, encoding="utf-8")
        logger.debug("Kernel written to %s", asm_path)

        result = self._run([self.assembler, "--64", "-o", str(obj_path), str(asm_path)], "assembler", timeout=30)
        if result.returncode != 0:
            raise KernelEmissionError(f"assembler rejected {asm_path.name}: {result.stderr.strip()[:400]}")
        result = self._run([self.linker, "-static", "-o", str(exe_path), str(obj_path)], "linker", timeout=30)
        if result.returncode != 0:
            raise BackendUnavailableError(f"load failure linking {obj_path.name}: {result.stderr.strip()[:400]}")
        return exe_path

    def run_counted(self, executable: Path, events: Sequence[PerfEvent], pmu: str = "cpu") -> KernelRun:
        """
        在 perf stat 計數模式下執行核心 (只計 user mode)

        Args:
            executable: 執行檔
            events: 要計數的事件
            pmu: PMU 名稱

        Returns:
            KernelRun；只有核心以 KERNEL_EXIT_STATUS 結束時 ok 為 True；
            被訊號終止、提早結束或逾時都視為出錯
        """
        stats_path = executable.with_suffix(".csv")
        command = [self.perf, "stat", "-x", ",", "-o", str(stats_path)]
        for event in events:
            command += ["-e", event.format(pmu)]
        command += ["--", str(executable)]

        try:
            result = self._run(command, "perf")
        except subprocess.TimeoutExpired:
            logger.warning("Kernel %s exceeded the %.1fs watchdog", executable.name, self.timeout)
            return KernelRun(counts={}, returncode=-1, timed_out=True)

        if any(marker in result.stderr for marker in _PERMISSION_MARKERS):
            raise BackendUnavailableError(
                "counter interface permission denied: requires CAP_PERFMON or kernel.perf_event_paranoid <= 2"
            )
        signaled = any(marker in result.stderr for marker in _SIGNAL_MARKERS)
        if signaled or result.returncode != KERNEL_EXIT_STATUS:
            logger.debug("perf stderr for %s: %s", executable.name, result.stderr.strip()[:400])
        text = stats_path.read_text(encoding="utf-8") if stats_path.exists() else ""
        return KernelRun(counts=parse_perf_csv(text), returncode=result.returncode, signaled=signaled)

    def execute(self, source: str, stem: Path, events: Sequence[PerfEvent], pmu: str = "cpu") -> Tuple[KernelRun, Path]:
        executable = self.build(source, stem)
        return self.run_counted(executable, events, pmu), executable
