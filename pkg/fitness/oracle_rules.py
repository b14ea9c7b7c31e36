# oracle_rules.py
"""
規則式模擬微架構

四條規則對應已知的暫態路徑：
  1. SIMD 向量混用 (legacy SSE 與 VEX/EVEX 相鄰切換)
  2. 精度混用 (單/雙精度之間的 RAW 相依，中間沒有精度轉換)
  3. FMA 讀取 denormal 暫存器
  4. AES 讀取 denormal 後其結果被 SSE 浮點指令 RAW 讀取
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.catalog import REGISTER_BANK_SIZE, VECTOR_KINDS, Attribute, InstructionInstance, OperandKind
from utils.errors import ConfigError

from .classes import ALL_CLASSES, EquivalenceClass, FitnessObservation, zero_counts

logger = logging.getLogger(__name__)

PROFILE_IDS: Tuple[str, ...] = ("alder_lake", "comet_lake", "sapphire_rapids", "ice_lake")

SIMD_VECTOR_INTERMIX = 1
PRECISION_INTERMIX = 2
FMA_DENORMAL = 3
AES_SSE_DENORMAL = 4


@dataclass(frozen=True)
class RuleSpec:
    """一條模擬規則的中繼資料 (視窗大小與重複次數只寫入報告，不影響模擬)"""
    rule_id: int
    name: str
    contributions: Mapping[EquivalenceClass, int]
    generations: FrozenSet[str]
    window_size: int
    min_reps: int
    description: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {
            "rule_id": self.rule_id,
            "name": self.name,
            "classes": [c.label for c in ALL_CLASSES if c in self.contributions],
            "generations": sorted(self.generations),
            "window_size": self.window_size,
            "min_reps": self.min_reps,
            "description": self.description,
        }


DEFAULT_RULES: Tuple[RuleSpec, ...] = (
    RuleSpec(
        SIMD_VECTOR_INTERMIX, "simd_vector_intermix",
        MappingProxyType({EquivalenceClass.MC_SMC: 1, EquivalenceClass.SSE_AVX_MIX: 1}),
        frozenset({"alder_lake", "sapphire_rapids"}), window_size=17, min_reps=1,
        description="legacy SSE and VEX/EVEX instructions interleaved, no register dependency",
    ),
    RuleSpec(
        PRECISION_INTERMIX, "precision_intermix",
        MappingProxyType({
            EquivalenceClass.HW_ASSIST: 1,
            EquivalenceClass.MC_SMC: 1,
            EquivalenceClass.MC_MEMORY_ORDERING: 1,
        }),
        frozenset({"alder_lake", "sapphire_rapids"}), window_size=20, min_reps=100,
        description="single/double precision RAW dependency without a precision convert",
    ),
    RuleSpec(
        FMA_DENORMAL, "fma_denormal",
        MappingProxyType({EquivalenceClass.FP_ASSIST: 1}),
        frozenset(PROFILE_IDS), window_size=12, min_reps=32,
        description="FMA instruction reading a denormal register",
    ),
    RuleSpec(
        AES_SSE_DENORMAL, "aes_sse_denormal",
        MappingProxyType({EquivalenceClass.FP_ASSIST: 1, EquivalenceClass.MC_SMC: 1}),
        frozenset(PROFILE_IDS), window_size=12, min_reps=32,
        description="AES result over denormal input RAW-read by an SSE floating-point instruction",
    ),
)


@dataclass(frozen=True)
class MicroarchProfile:
    """模擬的處理器世代與其啟用的規則"""
    id: str
    rule_enable: Mapping[int, bool]
    rules: Tuple[RuleSpec, ...] = DEFAULT_RULES

    def enabled(self, rule_id: int) -> bool:
        return bool(self.rule_enable.get(rule_id, False))

    def rule(self, rule_id: int) -> RuleSpec:
        for spec in self.rules:
            if spec.rule_id == rule_id:
                return spec
        raise KeyError(rule_id)


def get_profile(profile_id: str, rules: Sequence[RuleSpec] = DEFAULT_RULES) -> MicroarchProfile:
    """
    依世代名稱建立 MicroarchProfile

    Args:
        profile_id: alder_lake / comet_lake / sapphire_rapids / ice_lake
        rules: 規則表 (可由覆寫檔修改)

    Returns:
        rule_enable 依規則表的 generations 欄位決定
    """
    if profile_id not in PROFILE_IDS:
        raise ValueError(f"unknown microarchitecture profile: {profile_id}")
    return MicroarchProfile(
        id=profile_id,
        rule_enable=MappingProxyType({r.rule_id: profile_id in r.generations for r in rules}),
        rules=tuple(rules),
    )


class RuleOverride(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled_on: Optional[List[str]] = None
    window_size: Optional[int] = Field(default=None, ge=0)
    min_reps: Optional[int] = Field(default=None, ge=1)
    description: Optional[str] = None


class RuleOverrideFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rules: Dict[str, RuleOverride] = Field(default_factory=dict)


def load_rule_overrides(path: Union[str, Path], rules: Sequence[RuleSpec] = DEFAULT_RULES) -> Tuple[RuleSpec, ...]:
    """
    讀取規則覆寫檔 (YAML)，鍵可為規則編號或名稱

    Args:
        path: 覆寫檔路徑
        rules: 基礎規則表

    Returns:
        套用覆寫後的新規則表
    """
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        overrides = RuleOverrideFile.model_validate(document)
    except OSError as e:
        raise ConfigError(f"cannot read rule override file {path}: {e}", field="rule_overrides") from e
    except (yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"invalid rule override file {path}: {e}", field="rule_overrides") from e

    by_key = {}
    for rule in rules:
        by_key[str(rule.rule_id)] = rule
        by_key[rule.name] = rule

    updated = {rule.rule_id: rule for rule in rules}
    for key, override in overrides.rules.items():
        if key not in by_key:
            raise ConfigError(f"unknown rule in override file: {key}", field=f"rules.{key}")
        rule = updated[by_key[key].rule_id]
        changes = {}
        if override.enabled_on is not None:
            unknown = set(override.enabled_on) - set(PROFILE_IDS)
            if unknown:
                raise ConfigError(f"unknown profile(s) {sorted(unknown)}", field=f"rules.{key}.enabled_on")
            changes["generations"] = frozenset(override.enabled_on)
        for name in ("window_size", "min_reps", "description"):
            value = getattr(override, name)
            if value is not None:
                changes[name] = value
        updated[rule.rule_id] = replace(rule, **changes)
        logger.debug("Rule %s overridden: %s", rule.name, sorted(changes))
    return tuple(updated[rule.rule_id] for rule in rules)


@dataclass(frozen=True)
class DataEnvironment:
    """執行前的暫存器/記憶體預置狀態"""
    denormal_registers: FrozenSet[int] = frozenset()
    scratch_init: int = 0x00

    def __post_init__(self):
        object.__setattr__(self, "denormal_registers", frozenset(self.denormal_registers))
        for index in self.denormal_registers:
            if not 0 <= index < REGISTER_BANK_SIZE:
                raise ValueError(f"denormal register index {index} outside 0-{REGISTER_BANK_SIZE - 1}")
        if not 0 <= self.scratch_init <= 0xFF:
            raise ValueError("scratch_init must be a byte value")


@dataclass(frozen=True)
class RuleFiring:
    rule_id: int
    indices: Tuple[int, ...]
    contributions: Mapping[EquivalenceClass, int]


@dataclass(frozen=True)
class RuleTrace:
    """每條規則在哪些指令位置觸發，以及每次觸發貢獻的計數"""
    firings: Tuple[RuleFiring, ...] = field(default_factory=tuple)

    @property
    def fired_rules(self) -> Tuple[int, ...]:
        return tuple(sorted({f.rule_id for f in self.firings}))

    def rule_fired(self, rule_id: int) -> bool:
        return any(f.rule_id == rule_id for f in self.firings)

    def indices(self, rule_id: int) -> List[Tuple[int, ...]]:
        return [f.indices for f in self.firings if f.rule_id == rule_id]

    def counts(self, reps: int = 1) -> Dict[EquivalenceClass, int]:
        totals = zero_counts()
        for firing in self.firings:
            for cls, increment in firing.contributions.items():
                totals[cls] += increment * reps
        return totals

    def to_dict(self) -> List[Dict[str, object]]:
        return [
            {
                "rule": f.rule_id,
                "indices": list(f.indices),
                "contributions": {c.label: n for c, n in f.contributions.items()},
            }
            for f in self.firings
        ]


def _register_key(kind: OperandKind, index: int) -> Tuple[str, int]:
    # xmm/ymm/zmm 同編號視為同一個實體暫存器
    if kind in VECTOR_KINDS:
        return ("vec", index)
    return (kind.value, index)


def _is_simd(inst: InstructionInstance) -> bool:
    return inst.spec.has(Attribute.IS_LEGACY_SSE) or inst.spec.has(Attribute.IS_VEX_OR_EVEX)


def _precision(inst: InstructionInstance) -> Optional[str]:
    if inst.spec.has(Attribute.IS_SINGLE_PRECISION_FP):
        return "sp"
    if inst.spec.has(Attribute.IS_DOUBLE_PRECISION_FP):
        return "dp"
    return None


def _reads_denormal(inst: InstructionInstance, env: DataEnvironment) -> bool:
    return any(
        kind in VECTOR_KINDS and index in env.denormal_registers
        for kind, index in inst.registers(reads=True)
    )


def trace(seq: Sequence[InstructionInstance], profile: MicroarchProfile, env: DataEnvironment) -> RuleTrace:
    """
    掃描序列並回傳規則觸發紀錄

    Args:
        seq: 指令序列
        profile: 模擬的處理器世代
        env: 資料預置狀態

    Returns:
        RuleTrace，依指令位置排序
    """
    firings: List[Tuple[int, RuleFiring]] = []
    last_writer: Dict[Tuple[str, int], int] = {}
    converts: List[int] = []
    previous_simd: Optional[int] = None

    for j, inst in enumerate(seq):
        spec = inst.spec

        if profile.enabled(SIMD_VECTOR_INTERMIX) and _is_simd(inst):
            if previous_simd is not None and \
                    seq[previous_simd].spec.has(Attribute.IS_LEGACY_SSE) != spec.has(Attribute.IS_LEGACY_SSE):
                rule = profile.rule(SIMD_VECTOR_INTERMIX)
                firings.append((j, RuleFiring(rule.rule_id, (previous_simd, j), rule.contributions)))
        if _is_simd(inst):
            previous_simd = j

        sources = [last_writer.get(_register_key(kind, index)) for kind, index in inst.registers(reads=True)]
        sources = sorted({w for w in sources if w is not None})

        precision = _precision(inst)
        if profile.enabled(PRECISION_INTERMIX) and precision is not None:
            for w in sources:
                writer_precision = _precision(seq[w])
                if writer_precision is None or writer_precision == precision:
                    continue
                if any(w < c < j for c in converts):
                    continue
                rule = profile.rule(PRECISION_INTERMIX)
                firings.append((j, RuleFiring(rule.rule_id, (w, j), rule.contributions)))
                break

        if profile.enabled(FMA_DENORMAL) and spec.has(Attribute.IS_FMA_FAMILY) and _reads_denormal(inst, env):
            rule = profile.rule(FMA_DENORMAL)
            firings.append((j, RuleFiring(rule.rule_id, (j,), rule.contributions)))

        if profile.enabled(AES_SSE_DENORMAL) and spec.has(Attribute.IS_LEGACY_SSE) and precision is not None:
            for w in sources:
                writer = seq[w]
                if writer.spec.has(Attribute.IS_AES_FAMILY) and _reads_denormal(writer, env):
                    rule = profile.rule(AES_SSE_DENORMAL)
                    firings.append((j, RuleFiring(rule.rule_id, (w, j), rule.contributions)))
                    break

        # 先讀後寫：讀寫兼具的槽位讀到的是前一個寫入者
        if spec.has(Attribute.IS_PRECISION_CONVERT):
            converts.append(j)
        for kind, index in inst.registers(reads=False):
            last_writer[_register_key(kind, index)] = j

    firings.sort(key=lambda item: (item[0], item[1].rule_id))
    return RuleTrace(tuple(f for _, f in firings))


def simulate(seq: Sequence[InstructionInstance], reps: int, profile: MicroarchProfile, env: DataEnvironment,
             noise_lambda: float = 0.0, rng: Optional[np.random.Generator] = None) -> FitnessObservation:
    """
    模擬 reps 次執行並回傳觀測 (基線為零)

    noise_lambda > 0 時每個類別另加獨立的 Poisson(λ) 雜訊，需提供 rng
    """
    return FitnessObservation.from_counts(simulate_counts(seq, reps, profile, env, noise_lambda, rng), reps)


def simulate_counts(seq: Sequence[InstructionInstance], reps: int, profile: MicroarchProfile,
                    env: DataEnvironment, noise_lambda: float = 0.0,
                    rng: Optional[np.random.Generator] = None) -> Dict[EquivalenceClass, int]:
    if reps < 1:
        raise ValueError("reps must be >= 1")
    counts = trace(seq, profile, env).counts(reps)
    if noise_lambda > 0:
        if rng is None:
            raise ValueError("noise requires a random generator")
        noise = rng.poisson(noise_lambda, size=len(ALL_CLASSES))
        for i, cls in enumerate(ALL_CLASSES):
            counts[cls] += int(noise[i])
    return counts


def describe_rules(rules: Iterable[RuleSpec] = DEFAULT_RULES) -> List[Dict[str, object]]:
    return [rule.to_dict() for rule in rules]
