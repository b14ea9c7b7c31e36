# classes.py
import math
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
from scipy import stats


class Category(str, Enum):
    MICROCODE_ASSIST = "microcode_assist"
    MACHINE_CLEAR = "machine_clear"
    BRANCH_MISPREDICTION = "branch_misprediction"


class EquivalenceClass(str, Enum):
    """
    九個互斥的 bad speculation 等價類

    成員順序即計數器分類表的列順序，分類時用於平手裁決；
    值為對應的效能事件名稱，寫入日誌與報告時使用
    """
    FP_ASSIST = "ASSISTS.FP"
    HW_ASSIST = "ASSISTS.HARDWARE"
    PAGE_FAULT_ASSIST = "ASSISTS.PAGE_FAULT"
    SSE_AVX_MIX = "ASSISTS.SSE_AVX_MIX"
    MC_DISAMBIGUATION = "MACHINE_CLEARS.DISAMBIGUATION"
    MC_MEMORY_ORDERING = "MACHINE_CLEARS.MEMORY_ORDERING"
    MC_SMC = "MACHINE_CLEARS.SMC"
    BR_MISPREDICT = "BR_MISP_RETIRED.ALL_BRANCHES"
    TOPDOWN_BR_MISPREDICT = "TOPDOWN.BR_MISPREDICT_SLOTS"

    @property
    def label(self) -> str:
        return self.value

    @property
    def category(self) -> Category:
        return _CATEGORIES[self]

    @property
    def row(self) -> int:
        return ALL_CLASSES.index(self)

    @classmethod
    def parse(cls, text: str) -> "EquivalenceClass":
        """接受事件名稱 (ASSISTS.FP) 或成員名稱 (FP_ASSIST)"""
        for member in cls:
            if text in (member.value, member.name):
                return member
        raise ValueError(f"unknown equivalence class: {text}")


ALL_CLASSES: Tuple[EquivalenceClass, ...] = tuple(EquivalenceClass)

_CATEGORIES = {
    EquivalenceClass.FP_ASSIST: Category.MICROCODE_ASSIST,
    EquivalenceClass.HW_ASSIST: Category.MICROCODE_ASSIST,
    EquivalenceClass.PAGE_FAULT_ASSIST: Category.MICROCODE_ASSIST,
    EquivalenceClass.SSE_AVX_MIX: Category.MICROCODE_ASSIST,
    EquivalenceClass.MC_DISAMBIGUATION: Category.MACHINE_CLEAR,
    EquivalenceClass.MC_MEMORY_ORDERING: Category.MACHINE_CLEAR,
    EquivalenceClass.MC_SMC: Category.MACHINE_CLEAR,
    EquivalenceClass.BR_MISPREDICT: Category.BRANCH_MISPREDICTION,
    EquivalenceClass.TOPDOWN_BR_MISPREDICT: Category.BRANCH_MISPREDICTION,
}


def zero_counts() -> Dict[EquivalenceClass, float]:
    return {c: 0 for c in ALL_CLASSES}


@dataclass(frozen=True)
class BaselineProfile:
    """
    中性核心量測出的計數器雜訊基線

    thresholds[c] = mean[c] + k * std[c]；
    poisson 為 True 時 (計數雜訊為 Poisson 分布) 門檻再取 Poisson 上尾分位數的較大者，
    九個類別合計的單次誤觸發率不超過常態分布 k 標準差的單尾機率
    """
    mean: Mapping[EquivalenceClass, float]
    std: Mapping[EquivalenceClass, float]
    k: float = 3.0
    samples: int = 0
    poisson: bool = False

    @property
    def false_fire_rate(self) -> float:
        return float(stats.norm.sf(self.k))

    @property
    def thresholds(self) -> Dict[EquivalenceClass, float]:
        result = {}
        for c in ALL_CLASSES:
            threshold = max(0.0, self.mean[c] + self.k * self.std[c])
            if self.poisson and self.mean[c] > 0:
                per_class = self.false_fire_rate / len(ALL_CLASSES)
                threshold = max(threshold, float(stats.poisson.isf(per_class, self.mean[c])))
            result[c] = threshold
        return result

    @classmethod
    def zero(cls, k: float = 3.0) -> "BaselineProfile":
        return cls(mean=MappingProxyType(zero_counts()), std=MappingProxyType(zero_counts()), k=k)

    @classmethod
    def from_samples(cls, samples: Iterable[Mapping["EquivalenceClass", float]],
                     k: float = 3.0, poisson: bool = False) -> "BaselineProfile":
        """由多次中性核心計數 (每個為 class → count) 計算平均與標準差"""
        samples = list(samples)
        if not samples:
            return cls.zero(k)
        matrix = np.array([[float(s.get(c, 0)) for c in ALL_CLASSES] for s in samples])
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0, ddof=1) if len(samples) > 1 else np.zeros(len(ALL_CLASSES))
        return cls(
            mean=MappingProxyType({c: float(mean[i]) for i, c in enumerate(ALL_CLASSES)}),
            std=MappingProxyType({c: float(std[i]) for i, c in enumerate(ALL_CLASSES)}),
            k=k,
            samples=len(samples),
            poisson=poisson,
        )


@dataclass(frozen=True)
class FitnessObservation:
    """一次序列評估的結果"""
    raw_counts: Mapping[EquivalenceClass, float]
    excess: Mapping[EquivalenceClass, float]
    fired: Mapping[EquivalenceClass, bool]
    threshold: Mapping[EquivalenceClass, float]
    reps: int = 1
    invalid: bool = False

    @property
    def fired_classes(self) -> Tuple[EquivalenceClass, ...]:
        return tuple(c for c in ALL_CLASSES if self.fired.get(c, False))

    @property
    def any_fired(self) -> bool:
        return any(self.fired.get(c, False) for c in ALL_CLASSES)

    @classmethod
    def from_counts(cls, raw_counts: Mapping[EquivalenceClass, float], reps: int,
                    baseline: Optional[BaselineProfile] = None) -> "FitnessObservation":
        """
        將原始計數轉成觀測

        Args:
            raw_counts: 每個等價類的原始計數 (reps 次執行的總和)
            reps: 重複次數
            baseline: 雜訊基線，預設為全零

        Returns:
            excess 為扣除基線平均後每次重複的超出量 (下限 0)；
            fired[c] 當且僅當 excess[c] > threshold[c]
        """
        if reps < 1:
            raise ValueError("reps must be >= 1")
        baseline = baseline or BaselineProfile.zero()
        absolute = baseline.thresholds
        counts = {c: raw_counts.get(c, 0) for c in ALL_CLASSES}
        excess, fired, threshold = {}, {}, {}
        for c in ALL_CLASSES:
            delta = counts[c] - baseline.mean[c]
            excess[c] = max(0.0, delta / reps)
            threshold[c] = max(0.0, (absolute[c] - baseline.mean[c]) / reps)
            fired[c] = excess[c] > threshold[c]
        return cls(
            raw_counts=MappingProxyType(counts),
            excess=MappingProxyType(excess),
            fired=MappingProxyType(fired),
            threshold=MappingProxyType(threshold),
            reps=reps,
        )

    @classmethod
    def invalid_observation(cls, reps: int = 1) -> "FitnessObservation":
        zeros = zero_counts()
        return cls(
            raw_counts=MappingProxyType(dict(zeros)),
            excess=MappingProxyType({c: 0.0 for c in ALL_CLASSES}),
            fired=MappingProxyType({c: False for c in ALL_CLASSES}),
            threshold=MappingProxyType({c: 0.0 for c in ALL_CLASSES}),
            reps=max(1, reps),
            invalid=True,
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "raw_counts": {c.label: self.raw_counts[c] for c in ALL_CLASSES},
            "excess": {c.label: self.excess[c] for c in ALL_CLASSES},
            "fired": [c.label for c in self.fired_classes],
            "reps": self.reps,
            "invalid": self.invalid,
        }


def classify(obs: FitnessObservation) -> Optional[Tuple[EquivalenceClass, float]]:
    """
    將觀測分到單一等價類

    Args:
        obs: 適應度觀測

    Returns:
        沒有任何類別觸發時為 None；否則為 (觸發類別中 excess 最大者, 觸發類別 excess 總和)，
        平手時取表列順序較前者
    """
    fired = obs.fired_classes
    if not fired:
        return None
    best = fired[0]
    for c in fired[1:]:
        if obs.excess[c] > obs.excess[best]:
            best = c
    return best, math.fsum(obs.excess[c] for c in fired)
