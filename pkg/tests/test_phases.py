import asyncio
from dataclasses import replace

import numpy as np
import pytest

from config import Hyperparameters
from fitness.classes import EquivalenceClass, FitnessObservation
from fitness.oracle_rules import DataEnvironment
from fitness.sim_backend import SimulatedBackend
from swarm.coordinator import SubSwarm, form_subswarms, membership, select_leader
from swarm.particle import Particle, initialize_swarm
from swarm.phases import Evaluator, cognitive_phase, mixed_phase
from utils.catalog import build_pool
from utils.encoding import PositionCode

ENV = DataEnvironment(frozenset(range(8)))


def dummy(index, fitness=0.0, cls=None):
    position = (PositionCode(0, 0),)
    return Particle(index=index, position=position, best_position=position,
                    best_fitness=fitness, assigned_class=cls)


def check_partition(swarm, subswarms):
    members = [i for sub in subswarms for i in sub.members]
    assert len(members) == len(set(members))
    assert set(members) == {p.index for p in swarm.particles if p.assigned_class is not None}
    for sub in subswarms:
        assert all(swarm.particles[i].assigned_class is sub.cls for i in sub.members)
        best = max(swarm.particles[i].best_fitness for i in sub.members)
        assert swarm.particles[sub.leader].best_fitness == best
        assert sub.leader == min(i for i in sub.members if swarm.particles[i].best_fitness == best)


def test_form_subswarms_groups_by_class():
    smc, mix = EquivalenceClass.MC_SMC, EquivalenceClass.SSE_AVX_MIX
    particles = [dummy(0, 1.0, smc), dummy(1), dummy(2, 3.0, mix), dummy(3, 3.0, smc), dummy(4, 3.0, smc)]
    subswarms = form_subswarms(particles)
    assert [sub.cls for sub in subswarms] == [mix, smc]
    assert subswarms[1] == SubSwarm(smc, (0, 3, 4), leader=3)
    assert membership(subswarms)[2].cls is mix
    assert 1 not in membership(subswarms)


def test_no_classed_particles_gives_no_subswarms():
    assert form_subswarms([dummy(0), dummy(1)]) == []


def test_select_leader_rejects_empty():
    with pytest.raises(ValueError):
        select_leader([], [dummy(0)])


def run_phases(pool, hp, seed=5, max_evaluations=0, on_iteration=None):
    backend = SimulatedBackend("alder_lake")
    swarm = initialize_swarm(pool, hp, np.random.default_rng(seed))
    records = []
    evaluator = Evaluator(backend, 2, ENV, on_evaluation=records.append,
                          max_evaluations=max_evaluations)

    async def run():
        await cognitive_phase(swarm, evaluator, hp, on_iteration)
        await mixed_phase(swarm, form_subswarms(swarm), evaluator, hp, on_iteration)

    asyncio.run(run())
    return swarm, records, evaluator


@pytest.mark.parametrize("seed", range(20))
def test_subswarms_partition_classed_particles_every_iteration(pool, seed):
    hp = Hyperparameters(N=10, n=6, cognitive_iters=5, mixed_iters=8)
    seen = []

    def hook(phase, iteration, swarm, subswarms):
        check_partition(swarm, subswarms)
        seen.append((phase, iteration))

    run_phases(pool, hp, seed=seed, on_iteration=hook)
    assert seen == [("cognitive", i) for i in range(5)] + [("mixed", i) for i in range(8)]


def test_one_evaluation_per_particle_per_iteration(pool):
    hp = Hyperparameters(N=6, n=4, cognitive_iters=3, mixed_iters=2)
    _, records, evaluator = run_phases(pool, hp)
    assert evaluator.count == len(records) == 6 * 5
    assert [r.eval for r in records] == list(range(30))
    assert [r.particle for r in records[:6]] == list(range(6))


def test_personal_best_never_decreases(pool):
    hp = Hyperparameters(N=6, n=5, cognitive_iters=6, mixed_iters=6)
    history = {}

    def hook(phase, iteration, swarm, subswarms):
        for p in swarm.particles:
            assert p.best_fitness >= history.get(p.index, 0.0)
            history[p.index] = p.best_fitness
            assert len(p.best_position) >= hp.n_min

    run_phases(pool, hp, on_iteration=hook)


def test_evaluation_budget_truncates_iteration(pool):
    hp = Hyperparameters(N=5, n=4, cognitive_iters=10, mixed_iters=10)
    swarm, records, evaluator = run_phases(pool, hp, max_evaluations=7)
    assert evaluator.count == len(records) == 7
    assert evaluator.exhausted


def test_stop_request_ends_after_current_iteration(pool):
    hp = Hyperparameters(N=4, n=4, cognitive_iters=10, mixed_iters=10)
    holder = {}

    def hook(phase, iteration, swarm, subswarms):
        if phase == "cognitive" and iteration == 1:
            holder["evaluator"].stop()

    backend = SimulatedBackend("alder_lake")
    swarm = initialize_swarm(pool, hp, np.random.default_rng(0))
    evaluator = Evaluator(backend, 1, ENV)
    holder["evaluator"] = evaluator

    async def run():
        await cognitive_phase(swarm, evaluator, hp, hook)
        await mixed_phase(swarm, form_subswarms(swarm), evaluator, hp, hook)

    asyncio.run(run())
    assert evaluator.count == 2 * 4


def test_phases_are_deterministic_for_a_seed(pool):
    hp = Hyperparameters(N=6, n=5, cognitive_iters=4, mixed_iters=4)
    a, records_a, _ = run_phases(pool, hp, seed=21)
    b, records_b, _ = run_phases(pool, hp, seed=21)
    assert [p.position for p in a.particles] == [p.position for p in b.particles]
    assert [(r.codes, r.cls, r.fitness) for r in records_a] == [(r.codes, r.cls, r.fitness) for r in records_b]


def test_record_updates_best_only_on_strict_improvement():
    p = dummy(0)
    low = FitnessObservation.from_counts({EquivalenceClass.MC_SMC: 2}, reps=2)
    high = FitnessObservation.from_counts({EquivalenceClass.FP_ASSIST: 6}, reps=2)
    p = p.record(low)
    assert p.assigned_class is EquivalenceClass.MC_SMC and p.best_fitness == 1.0
    moved = replace(p, position=(PositionCode(1, 0),))
    same = moved.record(low)
    assert same.best_position == p.best_position
    better = moved.record(high)
    assert better.assigned_class is EquivalenceClass.FP_ASSIST
    assert better.best_fitness == 3.0
    assert better.best_position == (PositionCode(1, 0),)
    assert better.record(FitnessObservation.invalid_observation()).best_fitness == 3.0


def test_unpooled_particles_mutate_with_cognitive_beta(catalog):
    pool = build_pool(catalog, ["BASE"])
    hp = Hyperparameters(N=6, n=4, beta=0.0, cognitive_beta=1.0, gamma=0.0, cognitive_iters=0, mixed_iters=3)
    swarm = initialize_swarm(pool, hp, np.random.default_rng(2))
    start = [p.position for p in swarm.particles]
    classed = replace(swarm.particles[0], assigned_class=EquivalenceClass.MC_SMC, best_fitness=1.0)
    swarm.particles[0] = classed
    evaluator = Evaluator(SimulatedBackend("alder_lake"), 1, ENV)
    asyncio.run(mixed_phase(swarm, form_subswarms(swarm), evaluator, hp))
    # 子群成員以 beta=0 凍結，未分類粒子以 cognitive_beta=1 每次迭代都突變
    assert swarm.particles[0].position == start[0]
    assert any(p.position != start[p.index] for p in swarm.particles[1:])
    assert all(p.assigned_class is None for p in swarm.particles[1:])


@pytest.mark.parametrize("preset, collapsed", [("b1g0", True), ("b01g04", False)])
def test_mixed_phase_beta_sets_reduction_rate(pool, preset, collapsed):
    hp = Hyperparameters(N=10, n=2, n_min=1, cognitive_iters=2, mixed_iters=1).with_preset(preset)
    classed = set()

    def hook(phase, iteration, swarm, subswarms):
        if phase == "cognitive":
            classed.clear()
            classed.update(p.index for p in swarm.classed)
        else:
            lengths = [len(swarm.particles[i].position) for i in classed]
            assert all(length == 1 for length in lengths) == collapsed

    run_phases(pool, hp, on_iteration=hook)
    assert classed
