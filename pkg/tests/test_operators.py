import numpy as np
import pytest

from config import Hyperparameters
from swarm.operators import crossover_with_leader, mutate_instruction, mutate_operands, reduce_dimension
from swarm.particle import Particle, initialize_swarm
from utils.catalog import InstructionPool
from utils.encoding import decode_instance, encode_sequence


def particle(seq, index=0):
    position = encode_sequence(seq)
    return Particle(index=index, position=position, best_position=position)


@pytest.fixture
def seq(make):
    return [make("PXOR", 1, 2), make("VPXOR", 3, 4, 5), make("ADDPD", 6, 7), make("VZEROUPPER")]


def test_initialize_swarm_shape(pool):
    hp = Hyperparameters(N=12, n=7)
    swarm = initialize_swarm(pool, hp, np.random.default_rng(0))
    assert len(swarm) == 12
    for p in swarm.particles:
        assert len(p.position) == 7
        assert p.best_position == p.position
        assert p.best_fitness == 0.0 and p.assigned_class is None
        assert all(decode_instance(code, pool).spec in pool for code in p.position)


def test_initialize_swarm_is_seeded(pool):
    hp = Hyperparameters(N=5, n=4)
    a = initialize_swarm(pool, hp, np.random.default_rng(9))
    b = initialize_swarm(pool, hp, np.random.default_rng(9))
    assert [p.position for p in a.particles] == [p.position for p in b.particles]


@pytest.mark.parametrize("operator", ["operands", "instruction"])
def test_zero_probability_is_identity(pool, seq, rng, operator):
    p = particle(seq)
    mutate = mutate_operands if operator == "operands" else mutate_instruction
    for _ in range(50):
        assert mutate(p, 0.0, pool, rng) == p


def test_mutate_operands_keeps_opcodes(pool, seq, rng):
    p = particle(seq)
    for _ in range(100):
        q = mutate_operands(p, 1.0, pool, rng)
        assert [c.opcode_bits for c in q.position] == [c.opcode_bits for c in p.position]
        assert sum(a != b for a, b in zip(p.position, q.position)) <= 1
        assert q.best_position == p.best_position


def test_mutate_instruction_changes_at_most_one_dimension(pool, seq, rng):
    p = particle(seq)
    for _ in range(100):
        q = mutate_instruction(p, 1.0, pool, rng)
        assert len(q.position) == len(p.position)
        assert sum(a != b for a, b in zip(p.position, q.position)) <= 1
        assert all(decode_instance(code, pool).spec in pool for code in q.position)


def test_mutate_instruction_keeps_operands_for_same_layout(catalog, make, rng):
    vpxor, vpand = catalog.find("VPXOR"), catalog.find("VPAND")
    pair = InstructionPool(specs=(vpxor, vpand), extensions=frozenset({"AVX"}))
    p = particle([make("VPXOR", 1, 2, 3)])
    for _ in range(20):
        q = mutate_instruction(p, 1.0, pair, rng)
        assert decode_instance(q.position[0], pair).operands == (1, 2, 3)


def test_crossover_copies_from_leader_best(seq, make, rng):
    p = particle(seq, index=0)
    leader_seq = [make("MULSD", 9, 10), make("VADDPD", 11, 12, 13)]
    leader = particle(leader_seq, index=1)
    for _ in range(50):
        q = crossover_with_leader(p, leader, 1.0, rng)
        changed = [d for d in range(len(seq)) if q.position[d] != p.position[d]]
        assert len(changed) == 1
        d2 = changed[0]
        assert q.position[d2] == leader.best_position[min(d2, len(leader.best_position) - 1)]


def test_crossover_with_self_is_identity(seq, rng):
    p = particle(seq, index=3)
    assert crossover_with_leader(p, p, 1.0, rng) == p


def test_reduce_dimension_respects_floor(seq, rng):
    p = particle(seq)
    q = reduce_dimension(p, 1.0, 2, rng)
    assert len(q.position) == len(p.position) - 1
    while len(q.position) > 2:
        q = reduce_dimension(q, 1.0, 2, rng)
    assert reduce_dimension(q, 1.0, 2, rng) == q


def test_reduce_dimension_keeps_order(seq, rng):
    p = particle(seq)
    q = reduce_dimension(p, 1.0, 1, rng)
    remaining = iter(p.position)
    assert all(any(code == other for other in remaining) for code in q.position)
