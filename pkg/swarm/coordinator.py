# coordinator.py
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

from fitness.classes import ALL_CLASSES, EquivalenceClass

from .particle import Particle, Swarm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubSwarm:
    """同一等價類的粒子集合與其領導者"""
    cls: EquivalenceClass
    members: Tuple[int, ...]
    leader: int


def _particles(swarm: Union[Swarm, Sequence[Particle]]) -> Sequence[Particle]:
    return swarm.particles if isinstance(swarm, Swarm) else swarm


def select_leader(sub: Union[SubSwarm, Sequence[int]], swarm: Union[Swarm, Sequence[Particle]]) -> int:
    """
    選出個人最佳適應度最高的成員，平手時取最小編號

    Args:
        sub: 子群 (或成員編號)
        swarm: 粒子群

    Returns:
        領導者的粒子編號
    """
    members = sub.members if isinstance(sub, SubSwarm) else tuple(sub)
    if not members:
        raise ValueError("sub-swarm has no members")
    particles = _particles(swarm)
    best = min(members)
    for index in sorted(members):
        if particles[index].best_fitness > particles[best].best_fitness:
            best = index
    return best


def form_subswarms(swarm: Union[Swarm, Sequence[Particle]]) -> List[SubSwarm]:
    """
    依 assigned_class 將粒子分割成子群

    沒有等價類的粒子不屬於任何子群；結果依等價類表列順序排列
    """
    particles = _particles(swarm)
    groups: Dict[EquivalenceClass, List[int]] = {}
    for p in particles:
        if p.assigned_class is not None:
            groups.setdefault(p.assigned_class, []).append(p.index)

    subswarms = []
    for cls in ALL_CLASSES:
        if cls in groups:
            members = tuple(sorted(groups[cls]))
            subswarms.append(SubSwarm(cls=cls, members=members, leader=select_leader(members, particles)))
    return subswarms


def membership(subswarms: Sequence[SubSwarm]) -> Dict[int, SubSwarm]:
    return {index: sub for sub in subswarms for index in sub.members}


def summarize(subswarms: Sequence[SubSwarm]) -> str:
    if not subswarms:
        return "no sub-swarms"
    return ", ".join(f"{sub.cls.label}={len(sub.members)}" for sub in subswarms)
