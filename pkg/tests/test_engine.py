import itertools
import json

import numpy as np
import pytest

from qucoop import engine, perm, qap, qubo
from qucoop.engine import (IterationConfig, Linearization, PenaltySpec, PermutationParametrisation,
                           QuadraticObjective)
from qucoop.qubo import SolveConfig

from conftest import all_bits

EXACT = engine.exact_config()
SA = SolveConfig(num_reads=20, num_sweeps=500)


def synth(n, seed, alpha=None):
    inst = qap.synth_instance(n, seed)
    obj, param = qap.build_composite(inst, alpha, sense="max")
    return inst, obj, param


# -- types

def test_objective_validation():
    with pytest.raises(engine.EngineError):
        QuadraticObjective(np.array([[0, 1], [0, 0]]))
    with pytest.raises(engine.EngineError):
        QuadraticObjective(np.eye(2), [1, 2, 3])
    with pytest.raises(engine.EngineError):
        PenaltySpec(-1.0)
    f = QuadraticObjective(np.eye(2), [1, 0])
    assert f([1, 2]) == 6.0


def test_penalty_added_to_q():
    f = PenaltySpec(2.0).apply(QuadraticObjective(np.zeros((3, 3))))
    assert np.array_equal(f.Q, 2 * np.eye(3))


# -- linearize

def test_linearize_identity_anchor():
    param = PermutationParametrisation(3)
    lin = engine.linearize(param, np.zeros(3))
    assert np.array_equal(lin.apply(np.zeros(3)), np.eye(3).reshape(-1))


def test_linearize_apply_anchor_is_exact(rng):
    for n in (3, 4, 5):
        param = PermutationParametrisation(n)
        a = rng.integers(0, 2, param.dim_params)
        assert np.array_equal(engine.linearize(param, a).apply(a), param.evaluate(a))


def test_linearize_matches_hand_expansion(rng):
    param = PermutationParametrisation(4)
    for _ in range(10):
        a, x = rng.integers(0, 2, 6), rng.integers(0, 2, 6)
        direct = perm.apply(perm.PermutationCode.from_bits(4, a)).reshape(-1) + (x - a) @ perm.jacobian(
            perm.PermutationCode.from_bits(4, a))
        assert np.allclose(engine.linearize(param, a).apply(x), direct, atol=0)


def test_linearize_dimension_check():
    with pytest.raises(engine.EngineError):
        engine.linearize(PermutationParametrisation(3), np.zeros(4))


# -- assemble_qubo

def test_assemble_identity_case():
    lin = Linearization(np.zeros(3), np.eye(3), np.zeros(3))
    q = engine.assemble_qubo(QuadraticObjective(np.eye(3)), lin)
    assert np.array_equal(q.coupling, np.eye(3)) and not q.bias.any() and q.offset == 0.0


def test_assemble_fidelity_qap_n3(rng):
    inst, obj, param = synth(3, 4)
    for _ in range(5):
        lin = engine.linearize(param, rng.integers(0, 2, 3))
        q = engine.assemble_qubo(obj, lin)
        for x in all_bits(3):
            g = lin.apply(x)
            assert qubo.energy(q, x) == pytest.approx(g @ obj.Q @ g, rel=1e-9, abs=1e-9)


def test_assemble_fidelity_with_linear_term_and_penalty(rng):
    n = 4
    Q = rng.normal(size=(16, 16))
    obj = QuadraticObjective(Q + Q.T, rng.normal(size=16))
    pen = PenaltySpec(3.0)
    full = pen.apply(obj)
    param = PermutationParametrisation(n)
    lin = engine.linearize(param, rng.integers(0, 2, 6))
    q = engine.assemble_qubo(obj, lin, pen)
    for x in all_bits(6):
        f = full(lin.apply(x))
        assert abs(qubo.energy(q, x) - f) <= 1e-9 * (1 + abs(f))


def test_assemble_dimension_mismatch():
    lin = Linearization(np.zeros(4), np.eye(4), np.zeros(4))
    with pytest.raises(engine.EngineError):
        engine.assemble_qubo(QuadraticObjective(np.eye(3)), lin)


# -- step

def test_step_fixed_point():
    inst, obj, param = synth(3, 1)
    # 001 is the global optimum of this instance (enumerated below)
    vals = {tuple(b): obj(param.evaluate(b)) for b in all_bits(3)}
    best = min(vals, key=vals.get)
    nxt, info = engine.step(obj, param, np.array(best), solver_config=EXACT)
    assert tuple(nxt) == best and not info.moved
    again, _ = engine.step(obj, param, nxt, solver_config=EXACT)
    assert np.array_equal(again, nxt)


def test_step_n3_lands_on_feasible_permutation():
    for seed in range(10):
        inst, obj, param = synth(3, seed)
        a = np.zeros(3, dtype=np.int8)
        nxt, info = engine.step(obj, param, a, solver_config=EXACT)
        P = perm.apply(perm.PermutationCode.from_bits(3, nxt))
        perms = [np.eye(3)[list(p)] for p in itertools.permutations(range(3))]
        assert any(np.array_equal(P, Pp) for Pp in perms)
        f0, f1 = obj(param.evaluate(a)), obj(param.evaluate(nxt))
        assert f1 < f0 or np.array_equal(nxt, a)
        assert info.feasible


def test_step_zero_penalty_flags_infeasible():
    # found by exhaustive search over small synthetic instances with the exact backend
    inst, obj, param = synth(3, 0, alpha=0.0)
    a = np.zeros(3, dtype=np.int8)
    nxt, info = engine.step(obj, param, a, solver_config=EXACT)
    assert not info.feasible and np.array_equal(nxt, a)
    assert not param.is_feasible(info.ambient)


def test_step_recover_makes_g_equal_linearization(rng):
    for seed in range(5):
        inst, obj, param = synth(4, seed)
        a = rng.integers(0, 2, 6).astype(np.int8)
        nxt, info = engine.step(obj, param, a, solver_config=EXACT)
        if info.moved:
            assert np.array_equal(param.evaluate(nxt), np.rint(info.ambient))


def test_step_without_reparametrisation_keeps_candidate(rng):
    inst, obj, param = synth(4, 2)
    nxt, info = engine.step(obj, param, np.zeros(6), solver_config=EXACT, use_reparametrisation=False)
    if info.moved:
        assert np.array_equal(nxt, info.candidate)


# -- run

def test_run_zero_iters():
    inst, obj, param = synth(4, 0)
    rec = engine.run(obj, param, np.zeros(6), config=IterationConfig(max_iters=0))
    assert len(rec.iterations) == 1 and rec.iterations[0].t == 0
    assert rec.best_objective == obj(np.eye(4).reshape(-1))


def test_run_rejects_bad_x0():
    inst, obj, param = synth(4, 0)
    with pytest.raises(engine.EngineError):
        engine.run(obj, param, np.full(6, 2))
    with pytest.raises(engine.EngineError):
        IterationConfig(restarts=-1)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_run_monotone_exact(n):
    for seed in range(5):
        inst, obj, param = synth(n, seed)
        rec = engine.run(obj, param, np.zeros(param.dim_params), config=IterationConfig(solver=EXACT))
        assert np.all(np.diff(rec.objectives) <= 1e-9)
        assert rec.feasible


def test_run_monotone_sa(rng):
    inst, obj, param = synth(6, 3)
    rec = engine.run(obj, param, rng.integers(0, 2, 15), config=IterationConfig(solver=SA))
    assert np.all(np.diff(rec.objectives) <= 1e-9)


def test_run_synthetic_n5_recovery():
    # multi-start local search over 5 instances x 5 seeds; some instances have
    # deep local minima, so the rate is taken in aggregate
    hits = 0
    for i in range(5):
        inst, obj, param = synth(5, i)
        for seed in range(5):
            rec = engine.run(obj, param, np.zeros(10), config=IterationConfig(solver=SA, restarts=10, seed=seed))
            hits += qap.gm_objective(inst, qap.perm_matrix(rec.best_bits, 5)) < 1e-9
    assert hits >= 20


def test_restart_dominance():
    inst, obj, param = synth(5, 0)
    rec = engine.run(obj, param, np.zeros(10), config=IterationConfig(solver=SA, restarts=4))
    assert len(rec.runs) == 5
    assert rec.best_objective <= min(r.best_objective for r in rec.runs)
    assert rec in rec.runs


def test_noise_reports_best_over_iterations():
    inst, obj, param = synth(5, 2)
    rec = engine.run(obj, param, np.zeros(10), config=IterationConfig(
        solver=SA, noise_flips=1, max_iters=12))
    assert len(rec.iterations) == 13
    assert rec.best_objective == rec.objectives.min()
    assert obj(param.evaluate(rec.best_bits)) == rec.best_objective


def test_run_deterministic():
    inst, obj, param = synth(5, 2)
    cfg = IterationConfig(solver=SA, restarts=2, noise_flips=1, max_iters=5, seed=9)
    a = engine.run(obj, param, np.zeros(10), config=cfg)
    b = engine.run(obj, param, np.zeros(10), config=cfg)
    assert np.array_equal(a.objectives, b.objectives) and np.array_equal(a.best_bits, b.best_bits)


def test_run_record_json():
    inst, obj, param = synth(4, 0)
    rec = engine.run(obj, param, np.zeros(6), config=IterationConfig(solver=EXACT, restarts=1))
    data = json.loads(rec.dumps())
    assert set(data["summary"]) >= {"best_objective", "iterations", "feasible", "seed", "wall_ms"}
    assert data["iterations"][0]["t"] == 0
    assert len(data["restarts"]) == 2


# -- penalty majorizer

def test_majorizer_equality_at_anchor(rng):
    inst, obj, param = synth(4, 0)
    a = rng.integers(0, 2, 6)
    lin = engine.linearize(param, a)
    # h(x^t, x^t) = 0 and g^t(x^t) = g(x^t), so both sides coincide
    assert obj(param.evaluate(a)) == obj(lin.apply(a))


def test_majorizer_large_alpha_exhaustive():
    inst, obj, param = synth(4, 0)
    alpha = 10 * np.abs(obj.Q).max()
    for a in all_bits(6):
        for h in ("H1", "H2"):
            assert engine.penalty_majorizer_check(obj, param, a, alpha, h)


def test_majorizer_fails_without_penalty():
    inst, obj, param = synth(3, 0, alpha=0.0)
    assert not engine.penalty_majorizer_check(obj, param, np.zeros(3), 0.0)


def test_majorizer_unknown_variant():
    inst, obj, param = synth(3, 0)
    with pytest.raises(engine.EngineError):
        engine.penalty_majorizer_check(obj, param, np.zeros(3), 1.0, "H3")
