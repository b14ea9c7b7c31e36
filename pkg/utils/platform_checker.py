# platform_checker.py
import asyncio
import logging
import platform
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

logger = logging.getLogger(__name__)

PARANOID_PATH = Path("/proc/sys/kernel/perf_event_paranoid")


@dataclass(frozen=True)
class ToolStatus:
    name: str
    executable: str
    available: bool
    detail: str


class PlatformChecker:
    """檢查硬體後端需要的工具鏈並提供安裝指南"""

    def __init__(self, assembler: str = "as", linker: str = "ld", perf: str = "perf"):
        """
        初始化檢查器

        Args:
            assembler: 組譯器執行檔
            linker: 連結器執行檔
            perf: perf 執行檔
        """
        self.os_type = platform.system().lower()
        self.tools = {
            "assembler": (assembler, self._binutils_guide),
            "linker": (linker, self._binutils_guide),
            "perf": (perf, self._perf_guide),
        }

    async def check_tool(self, name: str) -> ToolStatus:
        """
        檢查單一工具

        Args:
            name: assembler / linker / perf

        Returns:
            ToolStatus；不可用時 detail 為安裝指南
        """
        if name not in self.tools:
            return ToolStatus(name, "", False, f"不支援檢查 {name}。")
        executable, guide = self.tools[name]
        if not shutil.which(executable):
            return ToolStatus(name, executable, False, guide())
        try:
            process = await asyncio.create_subprocess_exec(
                executable, "--version",
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.STDOUT,
            )
            stdout, _ = await process.communicate()
            version = stdout.decode(errors="replace").strip().split("\n")[0]
            return ToolStatus(name, executable, True, version)
        except OSError as e:
            logger.debug("Version query for %s failed: %s", executable, e)
            return ToolStatus(name, executable, True, f"{executable} 已安裝")

    async def check_all(self) -> Dict[str, ToolStatus]:
        names = list(self.tools)
        statuses = await asyncio.gather(*(self.check_tool(name) for name in names))
        return dict(zip(names, statuses))

    async def ready(self) -> Tuple[bool, str]:
        """工具鏈是否完整，以及給使用者的訊息"""
        if self.os_type != "linux":
            return False, f"硬體後端只支援 Linux perf 介面 (目前為 {self.os_type})。"
        statuses = await self.check_all()
        missing = [s for s in statuses.values() if not s.available]
        if missing:
            return False, "\n\n".join(s.detail for s in missing)
        paranoid = self.perf_event_paranoid()
        if paranoid is not None and paranoid > 2:
            return False, (
                f"kernel.perf_event_paranoid = {paranoid}，需要 CAP_PERFMON 或執行 "
                "`sudo sysctl kernel.perf_event_paranoid=2`"
            )
        return True, "、".join(s.detail for s in statuses.values())

    @staticmethod
    def perf_event_paranoid() -> Optional[int]:
        try:
            return int(PARANOID_PATH.read_text().strip())
        except (OSError, ValueError):
            return None

    def _binutils_guide(self) -> str:
        guide = "### 安裝 GNU binutils (as, ld)\n\n"
        guide += "使用套件管理器:\n"
        guide += "- Ubuntu/Debian: `sudo apt update && sudo apt install binutils`\n"
        guide += "- Fedora: `sudo dnf install binutils`\n"
        guide += "- Arch Linux: `sudo pacman -S binutils`\n"
        return guide

    def _perf_guide(self) -> str:
        guide = "### 安裝 perf\n\n"
        guide += "使用套件管理器:\n"
        guide += "- Ubuntu/Debian: `sudo apt install linux-tools-common linux-tools-$(uname -r)`\n"
        guide += "- Fedora: `sudo dnf install perf`\n"
        guide += "- Arch Linux: `sudo pacman -S perf`\n"
        return guide
