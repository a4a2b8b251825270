import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qucoop import qubo
from qucoop.qubo import Backend, QuboInstance, SolveConfig

from conftest import all_bits


def random_instance(rng, k):
    return QuboInstance(rng.uniform(-1, 1, (k, k)), rng.uniform(-1, 1, k), 0.0)


EXACT = SolveConfig(backend=Backend.EXACT)


# -- energy

def test_energy_zero_coupling_is_offset():
    inst = QuboInstance(np.zeros((2, 2)), np.zeros(2), 3.5)
    assert qubo.energy(inst, [1, 0]) == 3.5


def test_energy_small_example():
    inst = QuboInstance([[0, -2], [-2, 0]], [1, 1], 0.0)
    assert qubo.energy(inst, [1, 1]) == -2.0
    # by hand: 00 -> 0, 01 -> 1, 10 -> 1, 11 -> -2
    assert [qubo.energy(inst, b) for b in all_bits(2)] == [0.0, 1.0, 1.0, -2.0]


def test_energy_all_zeros_is_offset(rng):
    inst = QuboInstance(rng.normal(size=(5, 5)), rng.normal(size=5), -1.25)
    assert qubo.energy(inst, np.zeros(5)) == -1.25


def test_energy_dimension_mismatch():
    inst = QuboInstance(np.eye(3), np.zeros(3))
    with pytest.raises(qubo.QuboError):
        qubo.energy(inst, [1, 0])


def test_instance_validation():
    with pytest.raises(qubo.QuboError):
        QuboInstance(np.array([[np.nan]]), [0.0])
    with pytest.raises(qubo.QuboError):
        QuboInstance(np.eye(2), [0.0])
    inst = QuboInstance([[0, 2], [0, 0]], [0, 0])
    assert np.array_equal(inst.coupling, [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        inst.coupling[0, 0] = 5.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10)))
def test_symmetrization_property(M):
    inst = QuboInstance(M, np.zeros(6))
    S = (M + M.T) / 2
    for b in all_bits(6):
        assert qubo.energy(inst, b) == pytest.approx(b @ S @ b, abs=1e-9)


def test_symmetrization_exhaustive_k10(rng):
    M = rng.normal(size=(10, 10))
    inst = QuboInstance(M, np.zeros(10))
    B = all_bits(10).astype(float)
    direct = np.einsum("ij,jk,ik->i", B, (M + M.T) / 2, B)
    ours = np.array([qubo.energy(inst, b) for b in B])
    assert np.abs(direct - ours).max() < 1e-12


# -- solve

def test_exact_small_example():
    inst = QuboInstance([[0, -2], [-2, 0]], [1, 1], 0.0)
    s = qubo.solve(inst, EXACT)
    assert s.bits.tolist() == [1, 1] and s.energy == -2.0


@pytest.mark.parametrize("backend", list(Backend))
def test_zero_instance(backend):
    inst = QuboInstance(np.zeros((4, 4)), np.zeros(4), 2.0)
    s = qubo.solve(inst, SolveConfig(backend=backend, num_reads=2, num_sweeps=5))
    assert s.energy == 2.0
    if backend is Backend.EXACT:
        assert s.bits.tolist() == [0, 0, 0, 0]


def test_exact_tie_break_lexicographic():
    # 01 and 10 both give -1; 01 is lexicographically smaller
    inst = QuboInstance([[0, 1], [1, 0]], [-1, -1])
    assert qubo.solve(inst, EXACT).bits.tolist() == [0, 1]


def test_exact_size_limit():
    inst = QuboInstance(np.zeros((27, 27)), np.zeros(27))
    with pytest.raises(qubo.SizeLimitError):
        qubo.solve(inst, EXACT)


@pytest.mark.parametrize("kw", [dict(num_reads=0), dict(num_sweeps=0), dict(beta_schedule=(2.0, 1.0)),
                                dict(beta_schedule=(0.0, 1.0)), dict(seed=-1)])
def test_invalid_config(kw):
    with pytest.raises(qubo.QuboError):
        SolveConfig(**kw)


@pytest.mark.parametrize("k", [8, 12, 16])
def test_exact_optimality_certified(rng, k):
    inst = random_instance(rng, k)
    s = qubo.solve(inst, EXACT)
    B = all_bits(k).astype(float)
    E = np.einsum("ij,jk,ik->i", B, inst.coupling, B) + B @ inst.bias
    assert s.energy <= E.min() + 1e-9
    # lexicographically first minimizer
    assert np.array_equal(s.bits, B[np.flatnonzero(E <= E.min() + 1e-12)[0]])


def test_sa_matches_exact_mostly(rng):
    hits = 0
    for i in range(200):
        inst = random_instance(rng, 12)
        hits += qubo.solve(inst, SolveConfig(seed=i)).energy <= qubo.solve(inst, EXACT).energy + 1e-9
    assert hits >= 190


def test_sa_deterministic(rng):
    inst = random_instance(rng, 20)
    cfg = SolveConfig(num_reads=5, num_sweeps=200, seed=42)
    a, b = qubo.solve(inst, cfg), qubo.solve(inst, cfg)
    assert np.array_equal(a.bits, b.bits) and a.energy == b.energy


def test_sa_explicit_schedule(rng):
    inst = random_instance(rng, 10)
    s = qubo.solve(inst, SolveConfig(num_reads=10, num_sweeps=300, beta_schedule=(0.1, 10.0)))
    assert s.energy == qubo.energy(inst, s.bits)


def test_sa_best_so_far_monotone_and_delta_bookkeeping(rng):
    inst = QuboInstance(rng.uniform(-1, 1, (30, 30)), rng.uniform(-1, 1, 30), 0.75)
    for read in range(3):
        bits, tracked, trace = qubo.anneal_trace(inst, SolveConfig(num_reads=3, num_sweeps=400), read)
        assert np.all(np.diff(trace) <= 0)
        assert tracked == pytest.approx(qubo.energy(inst, bits), abs=1e-9)
        assert trace[-1] == pytest.approx(tracked, abs=1e-9)


def test_sample_energy_matches_energy(rng):
    inst = QuboInstance(rng.normal(size=(9, 9)), rng.normal(size=9), 4.0)
    s = qubo.solve(inst, SolveConfig(num_reads=4, num_sweeps=100))
    assert s.energy == qubo.energy(inst, s.bits)


# -- solve_batch

def test_batch_trivial(rng):
    assert qubo.solve_batch([], SolveConfig()) == []
    inst = random_instance(rng, 6)
    cfg = SolveConfig(num_reads=3, num_sweeps=50)
    [s] = qubo.solve_batch([inst], cfg)
    assert np.array_equal(s.bits, qubo.solve(inst, cfg).bits)


def test_batch_matches_sequential_and_order(rng):
    insts = [random_instance(rng, 12) for _ in range(200)]
    cfg = SolveConfig(num_reads=10, num_sweeps=200, seed=3)
    seq = [qubo.solve(i, cfg) for i in insts]
    par = qubo.solve_batch(insts, cfg, workers=4)
    assert all(np.array_equal(a.bits, b.bits) and a.energy == b.energy for a, b in zip(seq, par))
    rev = qubo.solve_batch(insts[::-1], cfg)[::-1]
    assert all(np.array_equal(a.bits, b.bits) for a, b in zip(seq, rev))


def test_batch_error_carries_index():
    ok = QuboInstance(np.eye(2), np.zeros(2))
    big = QuboInstance(np.zeros((27, 27)), np.zeros(27))
    with pytest.raises(qubo.SizeLimitError, match="instance 1"):
        qubo.solve_batch([ok, big], EXACT)


# -- dump format

def test_dump_round_trip(rng):
    inst = QuboInstance(np.triu(rng.integers(-3, 4, (5, 5)).astype(float)), [0, 1.5, 0, 0, -2], 0.25)
    back = qubo.loads(qubo.dumps(inst))
    assert np.array_equal(back.coupling, inst.coupling)
    assert np.array_equal(back.bias, inst.bias) and back.offset == inst.offset


def test_dump_layout():
    text = qubo.dumps(QuboInstance([[1, -1], [-1, 0]], [0, 2], 3.0))
    assert text == "2\n0 0 1.0\n0 1 -1.0\nb 1 2.0\noffset 3.0\n"
