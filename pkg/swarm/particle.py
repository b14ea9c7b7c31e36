# particle.py
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from config import Hyperparameters
from fitness.classes import EquivalenceClass, FitnessObservation, classify
from utils.catalog import InstructionInstance, InstructionPool, sample_instance
from utils.encoding import PositionVector, decode_sequence, encode_instance


@dataclass(frozen=True)
class Particle:
    """
    一個粒子：目前的位置向量、個人最佳與所屬等價類

    assigned_class 只跟隨個人最佳改變
    """
    index: int
    position: PositionVector
    best_position: PositionVector
    best_fitness: float = 0.0
    last_observation: Optional[FitnessObservation] = None
    assigned_class: Optional[EquivalenceClass] = None

    def __len__(self) -> int:
        return len(self.position)

    def instances(self, pool: InstructionPool) -> List[InstructionInstance]:
        return decode_sequence(self.position, pool)

    def best_instances(self, pool: InstructionPool) -> List[InstructionInstance]:
        return decode_sequence(self.best_position, pool)

    def record(self, observation: FitnessObservation) -> "Particle":
        """
        記錄一次評估結果

        Args:
            observation: 目前位置的觀測

        Returns:
            適應度嚴格提升時更新個人最佳與等價類的新粒子
        """
        result = classify(observation)
        updated = replace(self, last_observation=observation)
        if result is not None and result[1] > self.best_fitness:
            cls, fitness = result
            updated = replace(updated, best_position=self.position, best_fitness=fitness, assigned_class=cls)
        return updated


@dataclass
class Swarm:
    """粒子群狀態，由單一活動擁有者修改"""
    particles: List[Particle]
    rng: np.random.Generator
    hp: Hyperparameters
    pool: InstructionPool

    def __len__(self) -> int:
        return len(self.particles)

    @property
    def classed(self) -> List[Particle]:
        return [p for p in self.particles if p.assigned_class is not None]


def initialize_swarm(pool: InstructionPool, hp: Hyperparameters, rng: np.random.Generator) -> Swarm:
    """
    建立初始粒子群

    Args:
        pool: 指令池
        hp: 超參數 (N 個粒子，每個 n 維)
        rng: 已播種的亂數來源

    Returns:
        個人最佳等於起始位置、適應度為 0 的 Swarm
    """
    if len(pool) == 0:
        raise ValueError("pool must not be empty")
    particles = []
    for index in range(hp.N):
        position = tuple(encode_instance(sample_instance(pool, rng)) for _ in range(hp.n))
        particles.append(Particle(index=index, position=position, best_position=position))
    return Swarm(particles=particles, rng=rng, hp=hp, pool=pool)
