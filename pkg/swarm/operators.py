# operators.py
"""離散突變算子，每個都回傳新的 Particle，只改動 position"""
from dataclasses import replace

import numpy as np

from utils.catalog import InstructionInstance, InstructionPool, sample_operands
from utils.encoding import decode_instance, encode_instance

from .particle import Particle


def _slot_layout(spec):
    return tuple(slot.kind for slot in spec.slots)


def _replace_dimension(p: Particle, d: int, code) -> Particle:
    position = list(p.position)
    position[d] = code
    return replace(p, position=tuple(position))


def mutate_operands(p: Particle, prob: float, pool: InstructionPool, rng: np.random.Generator) -> Particle:
    """
    以機率 prob 重新取樣某一維的運算元，opcode 欄位不變

    Args:
        p: 粒子
        prob: 突變機率
        pool: 指令池
        rng: 亂數來源

    Returns:
        新粒子
    """
    if rng.random() >= prob or not p.position:
        return p
    d = int(rng.integers(len(p.position)))
    inst = decode_instance(p.position[d], pool)
    mutated = InstructionInstance(inst.spec, sample_operands(inst.spec, rng))
    return _replace_dimension(p, d, encode_instance(mutated))


def mutate_instruction(p: Particle, prob: float, pool: InstructionPool, rng: np.random.Generator) -> Particle:
    """
    以機率 prob 將某一維換成池中重新取樣的指令

    新指令的槽位配置與原指令相同時保留原運算元，否則重新取樣
    """
    if rng.random() >= prob or not p.position:
        return p
    d = int(rng.integers(len(p.position)))
    current = decode_instance(p.position[d], pool)
    spec = pool.specs[int(rng.integers(len(pool.specs)))]
    if _slot_layout(spec) == _slot_layout(current.spec):
        operands = current.operands
    else:
        operands = sample_operands(spec, rng)
    return _replace_dimension(p, d, encode_instance(InstructionInstance(spec, operands)))


def crossover_with_leader(p: Particle, leader: Particle, prob: float, rng: np.random.Generator) -> Particle:
    """
    以機率 prob 用領導者個人最佳的第 min(d2, |leader|-1) 維覆寫 p 的第 d2 維

    p 自己就是領導者時不變
    """
    if rng.random() >= prob or not p.position:
        return p
    d2 = int(rng.integers(len(p.position)))
    if leader.index == p.index or not leader.best_position:
        return p
    source = leader.best_position[min(d2, len(leader.best_position) - 1)]
    return _replace_dimension(p, d2, source)


def reduce_dimension(p: Particle, prob: float, n_min: int, rng: np.random.Generator) -> Particle:
    """以機率 prob 刪除一個隨機維度，長度不低於 n_min"""
    if rng.random() >= prob or len(p.position) <= n_min:
        return p
    d = int(rng.integers(len(p.position)))
    return replace(p, position=p.position[:d] + p.position[d + 1:])
