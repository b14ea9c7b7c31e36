# catalog.py
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
from lxml import etree

from .errors import CatalogError, PoolError

logger = logging.getLogger(__name__)

# 立即數只從代表性集合中取樣 (編碼與實際資料無關)
IMMEDIATE_VALUES: Tuple[int, ...] = (0x00, 0x01, 0x7F, 0xFF)
REGISTER_BANK_SIZE = 16
MASK_BANK_SIZE = 8
SCRATCH_SLOTS = 16
MAX_SLOTS = 5
SLOT_WIDTHS = (8, 64, 128, 256, 512)

GPR64_NAMES: Tuple[str, ...] = (
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
)

# 需要特權或不可用機器狀態的擴展集
PRIVILEGED_EXTENSIONS = frozenset({
    "VTX", "SVM", "SMX", "SGX", "SGX_ENCLV", "PCONFIG", "TDX", "SNP",
    "UINTR", "RDPRU", "XSAVES", "ENQCMD", "HRESET", "KEYLOCKER", "KEYLOCKER_WIDE",
    "AMD_INVLPGB", "MPX",
})
PRIVILEGED_MNEMONICS = frozenset({
    "HLT", "LGDT", "LIDT", "LLDT", "LTR", "LMSW", "CLTS", "INVD", "WBINVD",
    "WRMSR", "RDMSR", "RDPMC", "IN", "OUT", "INSB", "INSW", "INSD", "OUTSB",
    "OUTSW", "OUTSD", "CLI", "STI", "INVLPG", "INVPCID", "SWAPGS", "SYSRET",
    "SYSEXIT", "MONITOR", "MWAIT", "WBNOINVD", "XSETBV", "RSM", "IRET",
    "IRETD", "IRETQ",
})
VEX_EXTENSIONS = frozenset({"FMA", "F16C", "VAES", "VPCLMULQDQ", "GFNI", "AVXAES", "FMA4", "XOP"})

_PRECISION_CONVERT = re.compile(r"CVTT?(PS|PD|SS|SD)2(PS|PD|SS|SD)")
_FMA_MNEMONIC = re.compile(r"^VF(N?M(ADD|SUB)(SUB|ADD)?)(132|213|231)(PD|PS|SD|SS)$")
_IFMA_MNEMONIC = re.compile(r"^VPMADD52[HL]UQ$")


class OperandKind(str, Enum):
    """運算元槽位種類"""
    XMM = "xmm"
    YMM = "ymm"
    ZMM = "zmm"
    GPR64 = "gpr64"
    MASK = "mask"
    IMMEDIATE8 = "immediate8"
    MEMORY = "memory"


VECTOR_KINDS = frozenset({OperandKind.XMM, OperandKind.YMM, OperandKind.ZMM})


class Access(str, Enum):
    READ = "read"
    WRITE = "write"
    READ_WRITE = "read_write"


class Attribute(str, Enum):
    """指令規格旗標，供模擬預言機的規則使用"""
    IS_LEGACY_SSE = "is_legacy_sse"
    IS_VEX_OR_EVEX = "is_vex_or_evex"
    IS_SINGLE_PRECISION_FP = "is_single_precision_fp"
    IS_DOUBLE_PRECISION_FP = "is_double_precision_fp"
    IS_PRECISION_CONVERT = "is_precision_convert"
    IS_FMA_FAMILY = "is_fma_family"
    IS_AES_FAMILY = "is_aes_family"
    RING3_EXECUTABLE = "ring3_executable"


@dataclass(frozen=True)
class OperandSlot:
    """指令的一個運算元槽位"""
    kind: OperandKind
    width: int
    access: Access
    # 記憶體運算元在目錄中宣告的實際寬度 (組譯器需要 ptr 大小)
    declared_width: Optional[int] = None

    def __post_init__(self):
        if self.width not in SLOT_WIDTHS:
            raise ValueError(f"slot width {self.width} not in {SLOT_WIDTHS}")

    @property
    def reads(self) -> bool:
        return self.access in (Access.READ, Access.READ_WRITE)

    @property
    def writes(self) -> bool:
        return self.access in (Access.WRITE, Access.READ_WRITE)

    @property
    def bit_width(self) -> int:
        """此槽位在運算元位元串中佔用的位元數"""
        return 8 if self.kind is OperandKind.IMMEDIATE8 else 4

    @property
    def index_range(self) -> int:
        """合法值的上界 (不含)"""
        if self.kind is OperandKind.IMMEDIATE8:
            return 256
        if self.kind is OperandKind.MASK:
            return MASK_BANK_SIZE
        if self.kind is OperandKind.MEMORY:
            return SCRATCH_SLOTS
        return REGISTER_BANK_SIZE

    def is_legal(self, value: int) -> bool:
        return 0 <= value < self.index_range


@dataclass(frozen=True)
class InstructionSpec:
    """目錄中的一條指令規格"""
    mnemonic: str
    extension: str
    slots: Tuple[OperandSlot, ...]
    opcode_index: int
    attributes: FrozenSet[Attribute] = frozenset()
    iform: str = ""

    def has(self, attribute: Attribute) -> bool:
        return attribute in self.attributes

    @property
    def operand_bits(self) -> int:
        """i：唯一識別運算元所需的位元數"""
        return sum(slot.bit_width for slot in self.slots)


@dataclass(frozen=True)
class LoadSummary:
    loaded: int
    skipped_ring3: int
    skipped_unparseable: int


@dataclass(frozen=True)
class Catalog:
    """不可變的指令目錄"""
    specs: Tuple[InstructionSpec, ...]
    by_extension: Mapping[str, Tuple[int, ...]]
    by_opcode: Mapping[int, InstructionSpec]
    digest: str = ""
    summary: Optional[LoadSummary] = None

    @property
    def extensions(self) -> Tuple[str, ...]:
        return tuple(self.by_extension.keys())

    def find(self, mnemonic: str, extension: Optional[str] = None) -> InstructionSpec:
        """依助記符尋找第一個符合的規格"""
        for spec in self.specs:
            if spec.mnemonic.upper() == mnemonic.upper() and (extension is None or spec.extension == extension):
                return spec
        raise KeyError(mnemonic)

    @classmethod
    def from_specs(cls, specs: Iterable[InstructionSpec], digest: str = "",
                   summary: Optional[LoadSummary] = None) -> "Catalog":
        specs = tuple(specs)
        by_extension: Dict[str, List[int]] = {}
        by_opcode: Dict[int, InstructionSpec] = {}
        for position, spec in enumerate(specs):
            if spec.opcode_index in by_opcode:
                raise CatalogError(f"duplicate opcode_index {spec.opcode_index}")
            by_opcode[spec.opcode_index] = spec
            by_extension.setdefault(spec.extension, []).append(position)
        return cls(
            specs=specs,
            by_extension=MappingProxyType({k: tuple(v) for k, v in by_extension.items()}),
            by_opcode=MappingProxyType(by_opcode),
            digest=digest,
            summary=summary,
        )


@dataclass(frozen=True)
class InstructionInstance:
    """具體指令：規格加上選定的運算元"""
    spec: InstructionSpec
    operands: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.operands) != len(self.spec.slots):
            raise ValueError(
                f"{self.spec.mnemonic} expects {len(self.spec.slots)} operands, got {len(self.operands)}"
            )
        for slot, value in zip(self.spec.slots, self.operands):
            if not slot.is_legal(value):
                raise ValueError(f"operand value {value} illegal for {slot.kind.value} slot")
        if not self.spec.has(Attribute.RING3_EXECUTABLE):
            raise ValueError(f"{self.spec.mnemonic} is not ring-3 executable")

    def registers(self, *, reads: bool) -> List[Tuple[OperandKind, int]]:
        """回傳此指令讀取 (或寫入) 的暫存器 (種類, 索引)"""
        selected = []
        for slot, value in zip(self.spec.slots, self.operands):
            if slot.kind in (OperandKind.IMMEDIATE8, OperandKind.MEMORY):
                continue
            if (slot.reads if reads else slot.writes):
                selected.append((slot.kind, value))
        return selected


@dataclass(frozen=True)
class InstructionPool:
    """使用者選定擴展集的指令池"""
    specs: Tuple[InstructionSpec, ...]
    extensions: FrozenSet[str]
    # 與 Catalog 相同的查表介面，解碼時只接受池內的 opcode
    by_opcode: Mapping[int, InstructionSpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "by_opcode", MappingProxyType({s.opcode_index: s for s in self.specs}))

    def __len__(self) -> int:
        return len(self.specs)

    def __contains__(self, spec: object) -> bool:
        return isinstance(spec, InstructionSpec) and self.by_opcode.get(spec.opcode_index) == spec

    @property
    def opcodes(self) -> FrozenSet[int]:
        return frozenset(self.by_opcode)


class _SkipEntry(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail)
        self.reason = reason


def load_catalog(path: Union[str, Path]) -> Catalog:
    """
    讀取機器可讀的 x86 ISE 目錄

    Args:
        path: uops.info 格式的 XML 檔，或副檔名為 .json 的鏡像檔

    Returns:
        過濾後的 Catalog，opcode_index 依文件順序指派
    """
    path = Path(path)
    if not path.is_file():
        raise CatalogError(f"catalog file not found: {path}")

    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        entries = _read_json_entries(raw)
    else:
        entries = _read_xml_entries(path)

    specs: List[InstructionSpec] = []
    skipped = {"ring3": 0, "unparseable": 0}
    for entry in entries:
        try:
            specs.append(_build_spec(entry, opcode_index=len(specs)))
        except _SkipEntry as skip:
            skipped[skip.reason] += 1
            logger.debug("Skipping %s (%s): %s", entry.get("asm"), skip.reason, skip)

    summary = LoadSummary(len(specs), skipped["ring3"], skipped["unparseable"])
    logger.info(
        "Loaded %d instruction specs from %s (skipped: ring3=%d, unparseable=%d)",
        summary.loaded, path.name, summary.skipped_ring3, summary.skipped_unparseable,
    )
    if not specs:
        raise CatalogError("empty catalog")
    return Catalog.from_specs(specs, digest=hashlib.sha256(raw).hexdigest(), summary=summary)


def _read_xml_entries(path: Path) -> Iterator[Dict[str, Any]]:
    """以 iterparse 逐條讀取 <instruction> 元素"""
    try:
        for _, node in etree.iterparse(str(path), events=("end",), tag="instruction"):
            operands = []
            for op in node.iter("operand"):
                operand = dict(op.attrib)
                operand["text"] = (op.text or "").strip()
                operands.append(operand)
            entry = dict(node.attrib)
            entry["operands"] = operands
            yield entry
            node.clear()
    except etree.XMLSyntaxError as e:
        raise CatalogError(f"malformed catalog document: {e}") from e


def _read_json_entries(raw: bytes) -> List[Dict[str, Any]]:
    try:
        document = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CatalogError(f"malformed catalog document: {e}") from e
    if isinstance(document, dict):
        document = document.get("instructions")
    if not isinstance(document, list):
        raise CatalogError("malformed catalog document: expected a list of instructions")
    return [entry for entry in document if isinstance(entry, dict)]


def _flag(value: Any) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes")


def _register_kind(names: str, width: int) -> OperandKind:
    """從候選暫存器清單 (或寬度) 判斷暫存器種類"""
    candidates = [n.strip().lower() for n in names.split(",") if n.strip()]
    if not candidates:
        by_width = {128: OperandKind.XMM, 256: OperandKind.YMM, 512: OperandKind.ZMM, 64: OperandKind.GPR64}
        if width not in by_width:
            raise _SkipEntry("unparseable", f"register width {width}")
        return by_width[width]

    first = candidates[0]
    if first.startswith("xmm"):
        kind, needed = OperandKind.XMM, REGISTER_BANK_SIZE
    elif first.startswith("ymm"):
        kind, needed = OperandKind.YMM, REGISTER_BANK_SIZE
    elif first.startswith("zmm"):
        kind, needed = OperandKind.ZMM, REGISTER_BANK_SIZE
    elif re.fullmatch(r"k\d", first):
        kind, needed = OperandKind.MASK, MASK_BANK_SIZE
    elif first in GPR64_NAMES:
        kind, needed = OperandKind.GPR64, REGISTER_BANK_SIZE
    else:
        raise _SkipEntry("unparseable", f"register bank {first}")
    # 固定暫存器 (例如隱含的 XMM0) 不是可取樣的槽位
    if len(candidates) < needed:
        raise _SkipEntry("unparseable", f"fixed register operand {names}")
    return kind


def _slot_width(width: int) -> int:
    for allowed in SLOT_WIDTHS:
        if width <= allowed:
            return allowed
    raise _SkipEntry("unparseable", f"operand width {width}")


def _parse_operand(operand: Dict[str, Any]) -> Optional[OperandSlot]:
    if _flag(operand.get("suppressed", "0")):
        return None
    if _flag(operand.get("opmask", "0")) or operand.get("VSIB", "0") not in ("0", "", None):
        raise _SkipEntry("unparseable", "opmask/VSIB operand")

    op_type = operand.get("type")
    width = int(operand.get("width", 0) or 0)
    reads, writes = _flag(operand.get("r", "0")), _flag(operand.get("w", "0"))
    if reads and writes:
        access = Access.READ_WRITE
    elif writes:
        access = Access.WRITE
    else:
        access = Access.READ

    if op_type == "reg":
        kind = _register_kind(operand.get("text", ""), width)
        slot_width = {OperandKind.XMM: 128, OperandKind.YMM: 256, OperandKind.ZMM: 512}.get(kind, 64)
        return OperandSlot(kind, slot_width, access)
    if op_type == "mem":
        return OperandSlot(OperandKind.MEMORY, _slot_width(max(width, 8)), access, declared_width=width or None)
    if op_type == "imm":
        return OperandSlot(OperandKind.IMMEDIATE8, 8, Access.READ)
    raise _SkipEntry("unparseable", f"operand type {op_type}")


def _derive_attributes(mnemonic: str, extension: str, slots: Tuple[OperandSlot, ...]) -> FrozenSet[Attribute]:
    """由助記符、擴展集與槽位推導規則所需的旗標"""
    base = mnemonic.split()[-1].upper()
    vector = any(slot.kind in VECTOR_KINDS for slot in slots)
    attributes = {Attribute.RING3_EXECUTABLE}

    is_vex = extension.upper().startswith("AVX") or extension.upper() in VEX_EXTENSIONS
    if is_vex:
        attributes.add(Attribute.IS_VEX_OR_EVEX)
    elif any(slot.kind is OperandKind.XMM for slot in slots):
        attributes.add(Attribute.IS_LEGACY_SSE)

    if _PRECISION_CONVERT.search(base):
        source, target = _PRECISION_CONVERT.search(base).groups()
        if source[1] != target[1]:
            attributes.add(Attribute.IS_PRECISION_CONVERT)
    elif vector:
        if base.endswith(("PS", "SS")):
            attributes.add(Attribute.IS_SINGLE_PRECISION_FP)
        elif base.endswith(("PD", "SD")):
            attributes.add(Attribute.IS_DOUBLE_PRECISION_FP)

    if _FMA_MNEMONIC.match(base) or _IFMA_MNEMONIC.match(base):
        attributes.add(Attribute.IS_FMA_FAMILY)
    if base.startswith(("AES", "VAES")):
        attributes.add(Attribute.IS_AES_FAMILY)
    return frozenset(attributes)


def _build_spec(entry: Dict[str, Any], opcode_index: int) -> InstructionSpec:
    mnemonic = (entry.get("asm") or "").strip()
    extension = (entry.get("extension") or "").strip()
    if not mnemonic or not extension:
        raise _SkipEntry("unparseable", "missing asm or extension")

    base = mnemonic.split()[-1].upper()
    if ("ring3" in entry and not _flag(entry["ring3"])) \
            or extension.upper() in PRIVILEGED_EXTENSIONS or base in PRIVILEGED_MNEMONICS:
        raise _SkipEntry("ring3", mnemonic)

    slots = []
    for operand in entry.get("operands", []):
        try:
            slot = _parse_operand(operand)
        except (TypeError, ValueError) as e:
            raise _SkipEntry("unparseable", str(e)) from e
        if slot is not None:
            slots.append(slot)
    if len(slots) > MAX_SLOTS:
        raise _SkipEntry("unparseable", f"{len(slots)} operand slots")

    slots = tuple(slots)
    return InstructionSpec(
        mnemonic=mnemonic,
        extension=extension,
        slots=slots,
        opcode_index=opcode_index,
        attributes=_derive_attributes(mnemonic, extension, slots),
        iform=(entry.get("iform") or "").strip(),
    )


def build_pool(catalog: Catalog, extensions: Iterable[str]) -> InstructionPool:
    """
    依使用者選擇的擴展集建立指令池

    Args:
        catalog: 指令目錄
        extensions: 擴展集標籤

    Returns:
        依目錄順序排列的指令池
    """
    requested = frozenset(extensions)
    if not requested:
        raise PoolError("no extensions selected")
    for tag in sorted(requested):
        if tag not in catalog.by_extension:
            raise PoolError(f"unknown extension tag: {tag}", tag=tag)
    specs = tuple(spec for spec in catalog.specs if spec.extension in requested)
    return InstructionPool(specs=specs, extensions=requested)


def sample_operand(slot: OperandSlot, rng: np.random.Generator) -> int:
    if slot.kind is OperandKind.IMMEDIATE8:
        return IMMEDIATE_VALUES[int(rng.integers(len(IMMEDIATE_VALUES)))]
    return int(rng.integers(slot.index_range))


def sample_operands(spec: InstructionSpec, rng: np.random.Generator) -> Tuple[int, ...]:
    return tuple(sample_operand(slot, rng) for slot in spec.slots)


def sample_instance(pool: InstructionPool, rng: np.random.Generator) -> InstructionInstance:
    """從指令池均勻取樣一條指令，並隨機選擇合法運算元"""
    spec = pool.specs[int(rng.integers(len(pool.specs)))]
    return InstructionInstance(spec, sample_operands(spec, rng))
