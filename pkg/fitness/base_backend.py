# base_backend.py
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

from utils.catalog import InstructionInstance
from utils.errors import BackendUnavailableError, CalibrationError, SpecSwarmError

from .classes import BaselineProfile, EquivalenceClass, FitnessObservation
from .oracle_rules import DataEnvironment

logger = logging.getLogger(__name__)

# 校正樣本使用獨立的 nonce 區段，不與活動中的評估編號重疊
CALIBRATION_NONCE_BASE = 1 << 62


@dataclass(frozen=True)
class BackendCapabilities:
    reentrant: bool
    microarch_profile: str


class FitnessBackend:
    """適應度後端基礎類，模擬預言機與硬體後端繼承自此類"""

    name = "base"
    reentrant = False
    # 硬體後端校正至少需要的樣本數
    min_calibration_samples = 0
    # 計數雜訊是否為 Poisson 分布 (決定門檻的上尾分位數下限)
    poisson_noise = False

    def __init__(self, microarch_profile: str):
        """
        初始化後端

        Args:
            microarch_profile: 處理器世代名稱
        """
        self.microarch_profile = microarch_profile
        self.baseline: BaselineProfile = BaselineProfile.zero()
        self.is_calibrated = False

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(reentrant=self.reentrant, microarch_profile=self.microarch_profile)

    def measure(self, seq: Sequence[InstructionInstance], reps: int, env: DataEnvironment,
                nonce: int = 0) -> Optional[Dict[EquivalenceClass, float]]:
        """
        執行 (或模擬) 序列 reps 次，回傳每個等價類的原始計數 (由子類實現)

        Returns:
            原始計數；序列在硬體上出錯時回傳 None
        """
        raise NotImplementedError("子類必須實現此方法")

    def evaluate(self, seq: Sequence[InstructionInstance], reps: int, env: DataEnvironment,
                 nonce: int = 0) -> FitnessObservation:
        """
        評估一個序列

        Args:
            seq: 指令序列
            reps: 重複次數
            env: 資料預置狀態
            nonce: 全活動評估編號 (決定模擬雜訊)

        Returns:
            FitnessObservation；任何序列層級的失敗都轉為標記 invalid 的零觀測
        """
        if reps < 1:
            raise ValueError("reps must be >= 1")
        try:
            counts = self.measure(seq, reps, env, nonce)
        except BackendUnavailableError:
            raise
        except SpecSwarmError as e:
            logger.warning("Evaluation %d failed on %s backend: %s", nonce, self.name, e)
            counts = None
        if counts is None:
            return FitnessObservation.invalid_observation(reps)
        return FitnessObservation.from_counts(counts, reps, self.baseline)

    def calibrate_baseline(self, samples: int, reps: int = 1, k: float = 3.0,
                           env: Optional[DataEnvironment] = None) -> BaselineProfile:
        """
        以中性核心 (空序列) 量測計數器雜訊基線

        Args:
            samples: 樣本數
            reps: 每個樣本的重複次數，應與評估時相同
            k: 門檻的標準差倍數

        Returns:
            BaselineProfile，同時設為此後端的基線
        """
        if samples < self.min_calibration_samples:
            raise CalibrationError(
                f"{self.name} backend needs at least {self.min_calibration_samples} calibration samples, got {samples}"
            )
        env = env or DataEnvironment()
        measured = []
        for i in range(samples):
            counts = self.measure([], reps, env, CALIBRATION_NONCE_BASE + i)
            if counts is None:
                logger.warning("Neutral kernel sample %d was invalid, skipping", i)
                continue
            measured.append(counts)
        self.baseline = BaselineProfile.from_samples(measured, k=k, poisson=self.poisson_noise)
        self.is_calibrated = True
        logger.info(
            "Calibrated %s baseline over %d samples (max threshold %.3f)",
            self.name, len(measured), max(self.baseline.thresholds.values()),
        )
        return self.baseline
