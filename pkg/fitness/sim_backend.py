# sim_backend.py
from typing import Dict, Optional, Sequence

import numpy as np

from utils.catalog import InstructionInstance

from .base_backend import FitnessBackend
from .classes import EquivalenceClass
from .oracle_rules import (
    DEFAULT_RULES,
    DataEnvironment,
    MicroarchProfile,
    RuleSpec,
    RuleTrace,
    get_profile,
    simulate_counts,
    trace,
)


class SimulatedBackend(FitnessBackend):
    """規則式模擬預言機後端 (純函數，可平行評估)"""

    name = "sim"
    reentrant = True
    poisson_noise = True

    def __init__(self, profile: str = "alder_lake", noise_lambda: float = 0.0, noise_seed: int = 0,
                 rules: Sequence[RuleSpec] = DEFAULT_RULES):
        """
        初始化模擬後端

        Args:
            profile: 模擬的處理器世代
            noise_lambda: 每類別 Poisson 雜訊強度，0 表示無雜訊
            noise_seed: 雜訊種子；每次評估以 (noise_seed, nonce) 重新播種
            rules: 規則表
        """
        super().__init__(profile)
        if noise_lambda < 0:
            raise ValueError("noise_lambda must be >= 0")
        self.profile: MicroarchProfile = get_profile(profile, rules)
        self.noise_lambda = noise_lambda
        self.noise_seed = noise_seed

    def _noise_rng(self, nonce: int) -> Optional[np.random.Generator]:
        if self.noise_lambda <= 0:
            return None
        return np.random.default_rng([self.noise_seed, nonce])

    def measure(self, seq: Sequence[InstructionInstance], reps: int, env: DataEnvironment,
                nonce: int = 0) -> Optional[Dict[EquivalenceClass, float]]:
        return simulate_counts(seq, reps, self.profile, env, self.noise_lambda, self._noise_rng(nonce))

    def trace(self, seq: Sequence[InstructionInstance], env: DataEnvironment) -> RuleTrace:
        return trace(seq, self.profile, env)
