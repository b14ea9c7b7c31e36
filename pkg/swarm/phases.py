# phases.py
import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from config import Hyperparameters
from fitness.base_backend import FitnessBackend
from fitness.classes import EquivalenceClass, FitnessObservation, classify
from fitness.oracle_rules import DataEnvironment
from utils.catalog import InstructionInstance
from utils.encoding import PositionVector

from .coordinator import SubSwarm, form_subswarms, membership, summarize
from .operators import crossover_with_leader, mutate_instruction, mutate_operands, reduce_dimension
from .particle import Particle, Swarm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationRecord:
    """一次評估的稽核紀錄 (評估記錄檔中的一行)"""
    eval: int
    phase: str
    iteration: int
    particle: int
    codes: PositionVector
    observation: FitnessObservation
    cls: Optional[EquivalenceClass]
    fitness: float


EvaluationHook = Callable[[EvaluationRecord], None]
IterationHook = Callable[[str, int, Swarm, List[SubSwarm]], None]


class Evaluator:
    """
    將粒子交給適應度後端評估

    後端可重入時同一迭代的評估平行派送，結果一律依粒子編號合併；
    評估編號 (nonce) 在派送前依序指派
    """

    def __init__(self, backend: FitnessBackend, reps: int, env: DataEnvironment,
                 on_evaluation: Optional[EvaluationHook] = None,
                 max_evaluations: int = 0, max_wall_seconds: Optional[float] = None):
        self.backend = backend
        self.reps = reps
        self.env = env
        self.on_evaluation = on_evaluation
        self.max_evaluations = max_evaluations
        self.deadline = time.monotonic() + max_wall_seconds if max_wall_seconds else None
        self.count = 0
        self.stop_requested = False

    def stop(self):
        """在目前迭代結束後停止後續迭代"""
        self.stop_requested = True

    @property
    def remaining(self) -> Optional[int]:
        if not self.max_evaluations:
            return None
        return max(0, self.max_evaluations - self.count)

    @property
    def exhausted(self) -> bool:
        if self.stop_requested or self.remaining == 0:
            return True
        return self.deadline is not None and time.monotonic() >= self.deadline

    async def evaluate(self, particles: Sequence[Particle], sequences: Sequence[Sequence[InstructionInstance]],
                       phase: str, iteration: int) -> List[FitnessObservation]:
        """
        評估一批序列 (超出評估預算的部分不評估)

        Returns:
            依輸入順序的觀測，長度可能小於輸入
        """
        budget = self.remaining
        if budget is not None:
            particles, sequences = particles[:budget], sequences[:budget]
        nonces = list(range(self.count, self.count + len(particles)))
        self.count += len(particles)

        if self.backend.reentrant:
            observations = await asyncio.gather(*(
                asyncio.to_thread(self.backend.evaluate, seq, self.reps, self.env, nonce)
                for seq, nonce in zip(sequences, nonces)
            ))
        else:
            observations = []
            for seq, nonce in zip(sequences, nonces):
                observations.append(await asyncio.to_thread(self.backend.evaluate, seq, self.reps, self.env, nonce))

        for p, obs, nonce in zip(particles, observations, nonces):
            result = classify(obs)
            record = EvaluationRecord(
                eval=nonce,
                phase=phase,
                iteration=iteration,
                particle=p.index,
                codes=p.position,
                observation=obs,
                cls=result[0] if result else None,
                fitness=result[1] if result else 0.0,
            )
            logger.debug("eval %d %s[%d] particle %d -> %s", nonce, phase, iteration, p.index,
                         record.cls.label if record.cls else "-")
            if self.on_evaluation is not None:
                self.on_evaluation(record)
        return list(observations)


async def _evaluate_and_record(swarm: Swarm, candidates: List[Particle], evaluator: Evaluator,
                               phase: str, iteration: int) -> int:
    """評估候選粒子並寫回群體；未評估 (超出預算) 的粒子保持原狀，回傳評估數"""
    sequences = [p.instances(swarm.pool) for p in candidates]
    observations = await evaluator.evaluate(candidates, sequences, phase, iteration)
    for p, obs in zip(candidates, observations):
        swarm.particles[p.index] = p.record(obs)
    return len(observations)


async def cognitive_phase(swarm: Swarm, evaluator: Evaluator, hp: Optional[Hyperparameters] = None,
                          on_iteration: Optional[IterationHook] = None) -> Swarm:
    """
    認知階段：每個粒子只做自身突變 (γ = 0)

    Args:
        swarm: 粒子群
        evaluator: 評估器 (包裝已校正的後端)
        hp: 超參數，預設使用 swarm.hp；β 取 cognitive_beta
        on_iteration: 每次迭代結束後的回呼

    Returns:
        同一個 Swarm
    """
    hp = hp or swarm.hp
    beta = hp.cognitive_beta
    logger.info("Cognitive phase: %d iterations, beta=%.2f", hp.cognitive_iters, beta)
    for iteration in range(hp.cognitive_iters):
        if evaluator.exhausted:
            logger.info("Evaluation budget exhausted during cognitive phase (iteration %d)", iteration)
            break
        candidates = []
        for p in swarm.particles:
            p = mutate_instruction(p, beta, swarm.pool, swarm.rng)
            p = mutate_operands(p, beta, swarm.pool, swarm.rng)
            candidates.append(p)
        await _evaluate_and_record(swarm, candidates, evaluator, "cognitive", iteration)
        if on_iteration is not None:
            on_iteration("cognitive", iteration, swarm, form_subswarms(swarm))
    return swarm


async def mixed_phase(swarm: Swarm, subswarms: Sequence[SubSwarm], evaluator: Evaluator,
                      hp: Optional[Hyperparameters] = None,
                      on_iteration: Optional[IterationHook] = None) -> Swarm:
    """
    混合階段：子群成員在自身突變之外，以 γ 向領導者交叉並以 β 縮減維度

    未分類的粒子以 cognitive_beta 只做自身突變；子群與領導者在每次迭代結束時重新計算，
    粒子在迭代邊界遷移到新的等價類
    """
    hp = hp or swarm.hp
    subswarms = list(subswarms)
    logger.info("Mixed phase: %d iterations, beta=%.2f, gamma=%.2f", hp.mixed_iters, hp.beta, hp.gamma)
    for iteration in range(hp.mixed_iters):
        if evaluator.exhausted:
            logger.info("Evaluation budget exhausted during mixed phase (iteration %d)", iteration)
            break
        snapshot = list(swarm.particles)
        groups = membership(subswarms)
        candidates = []
        for p in snapshot:
            sub = groups.get(p.index)
            beta = hp.beta if sub is not None else hp.cognitive_beta
            p = mutate_instruction(p, beta, swarm.pool, swarm.rng)
            p = mutate_operands(p, beta, swarm.pool, swarm.rng)
            if sub is not None:
                p = crossover_with_leader(p, snapshot[sub.leader], hp.gamma, swarm.rng)
                p = reduce_dimension(p, hp.beta, hp.n_min, swarm.rng)
            candidates.append(p)
        await _evaluate_and_record(swarm, candidates, evaluator, "mixed", iteration)
        subswarms = form_subswarms(swarm)
        if on_iteration is not None:
            on_iteration("mixed", iteration, swarm, subswarms)
    logger.info("Mixed phase finished: %s", summarize(subswarms))
    return swarm
