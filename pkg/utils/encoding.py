# encoding.py
from typing import Iterable, List, NamedTuple, Sequence, Tuple, Union

from .catalog import (
    GPR64_NAMES,
    Catalog,
    InstructionInstance,
    InstructionPool,
    InstructionSpec,
    OperandKind,
    OperandSlot,
)
from .errors import DecodeError

SCRATCH_BASE_REGISTER = "r15"
SCRATCH_SLOT_STRIDE = 64

_PTR_SIZES = {
    8: "byte", 16: "word", 32: "dword", 64: "qword", 80: "tbyte",
    128: "xmmword", 256: "ymmword", 512: "zmmword",
}


class PositionCode(NamedTuple):
    """
    一條指令在位置向量中的編碼

    value = (opcode << i) | operand_identifier_bitstring；
    width 即 i，由指令規格的槽位配置決定
    """
    value: int
    width: int

    @property
    def opcode_bits(self) -> int:
        return self.value >> self.width

    @property
    def operand_bits(self) -> int:
        return self.value & ((1 << self.width) - 1)

    def with_operand_bits(self, bits: int) -> "PositionCode":
        """保留 opcode 欄位，只替換低 i 位"""
        return PositionCode((self.opcode_bits << self.width) | bits, self.width)


PositionVector = Tuple[PositionCode, ...]


def pack_operands(spec: InstructionSpec, operands: Sequence[int]) -> int:
    bits = 0
    for slot, value in zip(spec.slots, operands):
        bits = (bits << slot.bit_width) | value
    return bits


def encode_instance(inst: InstructionInstance) -> PositionCode:
    """
    將指令實例編碼為位置碼

    Args:
        inst: 指令實例

    Returns:
        (opcode_index << i) | 依槽位順序打包的運算元位元
    """
    width = inst.spec.operand_bits
    return PositionCode((inst.spec.opcode_index << width) | pack_operands(inst.spec, inst.operands), width)


def decode_instance(code: PositionCode, catalog: Union[Catalog, InstructionPool]) -> InstructionInstance:
    """
    將位置碼解碼回指令實例

    Args:
        code: 位置碼
        catalog: 指令目錄 (或指令池，此時池外的 opcode 視為未知)

    Returns:
        對應的指令實例
    """
    value, width = int(code[0]), int(code[1])
    spec = catalog.by_opcode.get(value >> width)
    if spec is None or spec.operand_bits != width:
        raise DecodeError(f"unknown opcode {value >> width} (i={width})")

    bits = value & ((1 << width) - 1)
    operands: List[int] = []
    for slot in reversed(spec.slots):
        operand = bits & ((1 << slot.bit_width) - 1)
        bits >>= slot.bit_width
        if not slot.is_legal(operand):
            raise DecodeError(
                f"operand bits {operand} exceed the legal index range of a {slot.kind.value} slot in {spec.mnemonic}"
            )
        operands.append(operand)
    return InstructionInstance(spec, tuple(reversed(operands)))


def encode_sequence(instances: Iterable[InstructionInstance]) -> PositionVector:
    return tuple(encode_instance(inst) for inst in instances)


def decode_sequence(codes: Iterable[Sequence[int]],
                    catalog: Union[Catalog, InstructionPool]) -> List[InstructionInstance]:
    return [decode_instance(PositionCode(*code), catalog) for code in codes]


def render_operand(slot: OperandSlot, value: int) -> str:
    if slot.kind in (OperandKind.XMM, OperandKind.YMM, OperandKind.ZMM):
        return f"{slot.kind.value}{value}"
    if slot.kind is OperandKind.GPR64:
        return GPR64_NAMES[value]
    if slot.kind is OperandKind.MASK:
        return f"k{value}"
    if slot.kind is OperandKind.IMMEDIATE8:
        return f"0x{value:02x}"
    address = f"[{SCRATCH_BASE_REGISTER} + {SCRATCH_SLOT_STRIDE * value}]"
    size = _PTR_SIZES.get(slot.declared_width or slot.width)
    return f"{size} ptr {address}" if size else address


def render_instance(inst: InstructionInstance) -> str:
    """以 Intel 語法輸出一條指令"""
    operands = ", ".join(render_operand(slot, value) for slot, value in zip(inst.spec.slots, inst.operands))
    return f"{inst.spec.mnemonic} {operands}" if operands else inst.spec.mnemonic


def render_sequence(instances: Iterable[InstructionInstance]) -> str:
    """每行一條指令"""
    return "\n".join(render_instance(inst) for inst in instances)
