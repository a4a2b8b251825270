"""The QuCOOP iteration.

Given an outer quadratic ``f(v) = <v, Q v + c>`` and a smooth parametrisation
``g`` of the feasible set by binary vectors, each iteration linearizes ``g``
at the current iterate, turns ``f`` composed with that affine map into a QUBO,
solves it and, when the linearized point is feasible, moves there.
"""
from __future__ import annotations

import abc
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import perm as _perm
from .qubo import Backend, QuboInstance, SolveConfig, energy, solve


class EngineError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """``f(v) = v^T Q v + c^T v`` over the ambient space."""

    Q: np.ndarray
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise EngineError(f"Q must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max(initial=0))):
            raise EngineError("Q must be symmetric")
        c = np.zeros(Q.shape[0]) if self.c is None else np.asarray(self.c, dtype=np.float64).reshape(-1)
        if c.shape[0] != Q.shape[0]:
            raise EngineError("c has the wrong length")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c))):
            raise EngineError("objective entries must be finite")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def __call__(self, v) -> float:
        v = np.asarray(v, dtype=np.float64)
        return float(v @ self.Q @ v + self.c @ v)


@dataclass(frozen=True)
class PenaltySpec:
    """Extra ``alpha * ||v||^2`` term added into the outer quadratic before assembly."""

    alpha: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise EngineError("alpha must be finite and >= 0")

    def apply(self, obj: QuadraticObjective) -> QuadraticObjective:
        if self.alpha == 0:
            return obj
        return QuadraticObjective(obj.Q + self.alpha * np.eye(obj.n), obj.c)


class Parametrisation(abc.ABC):
    """A smooth map ``g`` from ``R^k`` onto the ambient space whose image of ``{0,1}^k`` is the feasible set."""

    dim_params: int
    dim_ambient: int

    def evaluate(self, bits) -> np.ndarray:
        return self.evaluate_real(np.asarray(bits, dtype=np.float64))

    @abc.abstractmethod
    def evaluate_real(self, x) -> np.ndarray:
        ...

    @abc.abstractmethod
    def jacobian(self, x) -> np.ndarray:
        """``k x n`` matrix, row ``i`` is ``dg/dx_i``."""

    @abc.abstractmethod
    def is_feasible(self, v) -> bool:
        ...

    @abc.abstractmethod
    def recover(self, bits, v) -> np.ndarray:
        """Bits ``x`` with ``g(x) == v`` for a feasible ambient point ``v``.

        ``bits`` is the subproblem minimizer that produced ``v``.
        """


class PermutationParametrisation(Parametrisation):
    """``g(x) = vec(P(x))`` with the ordered-transposition product."""

    def __init__(self, n: int):
        self.order = _perm.TranspositionOrder(n)
        self.n = n
        self.dim_params = self.order.k
        self.dim_ambient = n * n

    def _binary(self, x) -> Optional[np.ndarray]:
        x = np.asarray(x)
        if np.all((x == 0) | (x == 1)):
            return x.astype(np.int8)
        return None

    def evaluate(self, bits) -> np.ndarray:
        b = self._binary(bits)
        if b is None:
            return self.evaluate_real(bits)
        return _perm.apply(_perm.PermutationCode(self.order, b)).reshape(-1)

    def evaluate_real(self, x) -> np.ndarray:
        return _perm.evaluate_real(x, self.n).reshape(-1)

    def jacobian(self, x) -> np.ndarray:
        b = self._binary(x)
        if b is None:
            return _perm.jacobian_real(x, self.n)
        return _perm.jacobian(_perm.PermutationCode(self.order, b))

    def is_feasible(self, v) -> bool:
        M = np.asarray(v).reshape(self.n, self.n)
        R = np.rint(M)
        return bool(np.allclose(M, R, atol=1e-8) and _perm.is_valid_permutation(R))

    def recover(self, bits, v) -> np.ndarray:
        M = np.rint(np.asarray(v).reshape(self.n, self.n))
        return _perm.decompose(M, self.order)


@dataclass(frozen=True, eq=False)
class Linearization:
    """Affine map ``x -> base + J^T x`` approximating ``g`` around ``anchor``."""

    base: np.ndarray
    jacobian: np.ndarray
    anchor: np.ndarray

    def apply(self, x) -> np.ndarray:
        return self.base + np.asarray(x, dtype=np.float64) @ self.jacobian


def linearize(param: Parametrisation, anchor) -> Linearization:
    anchor = np.asarray(anchor)
    if anchor.shape != (param.dim_params,):
        raise EngineError(f"anchor must have length {param.dim_params}, got {anchor.shape}")
    J = np.asarray(param.jacobian(anchor), dtype=np.float64)
    g0 = np.asarray(param.evaluate(anchor), dtype=np.float64)
    return Linearization(g0 - anchor.astype(np.float64) @ J, J, anchor.copy())


def assemble_qubo(obj: QuadraticObjective, lin: Linearization,
                  penalty: Optional[PenaltySpec] = None) -> QuboInstance:
    """QUBO whose energy equals ``f(base + J^T x)`` (penalty included) for every ``x``.

    With ``g_c = base``: coupling ``J Q J^T``, bias ``J (c + 2 Q g_c)`` and
    offset ``g_c^T Q g_c + c^T g_c``.
    """
    if lin.jacobian.shape[1] != obj.n:
        raise EngineError(f"ambient dimension mismatch: objective {obj.n}, linearization {lin.jacobian.shape[1]}")
    if penalty is not None:
        obj = penalty.apply(obj)
    J, gc = lin.jacobian, lin.base
    Qgc = obj.Q @ gc
    coupling = J @ obj.Q @ J.T
    bias = J @ (obj.c + 2.0 * Qgc)
    offset = float(gc @ Qgc + obj.c @ gc)
    return QuboInstance(coupling, bias, offset)


@dataclass(frozen=True)
class StepInfo:
    candidate: np.ndarray
    subproblem_energy: float
    feasible: bool
    moved: bool
    ambient: np.ndarray


def step(obj: QuadraticObjective, param: Parametrisation, anchor, penalty: Optional[PenaltySpec] = None,
         solver_config: SolveConfig = SolveConfig(), use_reparametrisation: bool = True,
         descent_safeguard: bool = False) -> tuple[np.ndarray, StepInfo]:
    """One iteration: linearize at ``anchor``, solve the QUBO, move if feasible.

    The anchor itself is always a candidate of the subproblem: a solver sample
    that is not strictly better than it is discarded, so the subproblem value
    never increases.  With ``descent_safeguard`` a move that raises the true
    objective is rejected as well.
    """
    anchor = np.asarray(anchor).astype(np.int8)
    lin = linearize(param, anchor)
    inst = assemble_qubo(obj, lin, penalty)
    sample = solve(inst, solver_config)
    e_anchor = energy(inst, anchor)
    tol = 1e-9 * (1.0 + abs(e_anchor))
    if sample.energy >= e_anchor - tol:
        v = lin.apply(anchor)
        return anchor, StepInfo(anchor, e_anchor, True, False, v)
    cand = np.asarray(sample.bits).astype(np.int8)
    v = lin.apply(cand)
    if not param.is_feasible(v):
        return anchor, StepInfo(cand, sample.energy, False, False, v)
    nxt = param.recover(cand, v).astype(np.int8) if use_reparametrisation else cand
    if descent_safeguard:
        full = obj if penalty is None else penalty.apply(obj)
        if full(param.evaluate(nxt)) > full(param.evaluate(anchor)):
            return anchor, StepInfo(cand, sample.energy, True, False, v)
    return nxt, StepInfo(cand, sample.energy, True, not np.array_equal(nxt, anchor), v)


@dataclass(frozen=True)
class IterationConfig:
    max_iters: int = 50
    solver: SolveConfig = SolveConfig()
    stop_on_fixed_point: bool = True
    restarts: int = 0
    noise_flips: int = 0
    use_reparametrisation: bool = True
    descent_safeguard: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0 or self.restarts < 0 or self.noise_flips < 0:
            raise EngineError("max_iters, restarts and noise_flips must be non-negative")


@dataclass
class IterationRecord:
    t: int
    bits: np.ndarray
    point: np.ndarray
    objective: float
    subproblem_energy: Optional[float]
    feasible: bool
    wall_ms: float

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "bits": [int(b) for b in self.bits],
            "objective": self.objective,
            "subproblem_energy": self.subproblem_energy,
            "feasible": self.feasible,
            "wall_ms": round(self.wall_ms, 3),
        }


@dataclass
class RunRecord:
    iterations: list[IterationRecord] = field(default_factory=list)
    best_bits: Optional[np.ndarray] = None
    best_objective: float = np.inf
    seed: int = 0
    restart: int = 0
    wall_ms: float = 0.0
    runs: list["RunRecord"] = field(default_factory=list)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([it.objective for it in self.iterations])

    @property
    def feasible(self) -> bool:
        return all(it.feasible for it in self.iterations)

    def _track(self, it: IterationRecord):
        self.iterations.append(it)
        if it.objective < self.best_objective:
            self.best_objective = it.objective
            self.best_bits = it.bits.copy()

    def summary(self) -> dict:
        return {
            "best_objective": self.best_objective,
            "iterations": max(len(self.iterations) - 1, 0),
            "feasible": self.feasible,
            "seed": self.seed,
            "wall_ms": round(self.wall_ms, 3),
        }

    def to_json(self) -> dict:
        out = {"iterations": [it.to_json() for it in self.iterations], "summary": self.summary()}
        if self.best_bits is not None:
            out["summary"]["best_bits"] = [int(b) for b in self.best_bits]
        if self.runs:
            out["restarts"] = [r.summary() for r in self.runs]
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _trajectory(obj, param, x0, penalty, config: IterationConfig, seed: int, restart: int) -> RunRecord:
    full = obj if penalty is None else penalty.apply(obj)
    rng = np.random.default_rng([seed, restart, 1])
    rec = RunRecord(seed=seed, restart=restart)
    t_start = time.perf_counter()
    x = np.asarray(x0).astype(np.int8)
    v = param.evaluate(x)
    rec._track(IterationRecord(0, x.copy(), v, full(v), None, bool(param.is_feasible(v)), 0.0))
    for t in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        anchor = x.copy()
        if config.noise_flips:
            idx = rng.choice(len(x), size=min(config.noise_flips, len(x)), replace=False)
            anchor[idx] ^= 1
        sub_seed = int(np.random.SeedSequence([seed, restart, t]).generate_state(1, dtype=np.uint64)[0])
        nxt, info = step(obj, param, anchor, penalty, config.solver.with_seed(sub_seed),
                         config.use_reparametrisation, config.descent_safeguard)
        v = param.evaluate(nxt)
        f_new = full(v)
        f_old = rec.iterations[-1].objective
        rec._track(IterationRecord(t, nxt.copy(), v, f_new, info.subproblem_energy, info.feasible,
                                   1e3 * (time.perf_counter() - t0)))
        if config.stop_on_fixed_point and not config.noise_flips:
            if np.array_equal(nxt, x) or f_old - f_new < 1e-12 * (1.0 + abs(f_old)):
                x = nxt
                break
        x = nxt
    rec.wall_ms = 1e3 * (time.perf_counter() - t_start)
    return rec


def run(obj: QuadraticObjective, param: Parametrisation, x0, penalty: Optional[PenaltySpec] = None,
        config: IterationConfig = IterationConfig()) -> RunRecord:
    """Iterate :func:`step` from ``x0``.

    With ``restarts = r`` the trajectory from ``x0`` is followed by ``r`` more
    from uniformly random starting points (seed ``config.seed + i``); the
    returned record is the best one, with the others summarised in ``runs``.
    With ``noise_flips`` the iterate has that many random bits flipped before
    every linearization and the best iterate over the trajectory is reported.
    """
    x0 = np.asarray(x0)
    if x0.shape != (param.dim_params,) or not np.all((x0 == 0) | (x0 == 1)):
        raise EngineError(f"x0 must be a binary vector of length {param.dim_params}")
    best = _trajectory(obj, param, x0, penalty, config, config.seed, 0)
    if not config.restarts:
        return best
    runs = [best]
    for r in range(1, config.restarts + 1):
        seed = config.seed + r
        start = np.random.default_rng([seed, r, 0]).integers(0, 2, size=param.dim_params)
        runs.append(_trajectory(obj, param, start, penalty, config, seed, r))
    best = min(runs, key=lambda rec: rec.best_objective)
    best.runs = runs
    return best


def penalty_majorizer_check(obj: QuadraticObjective, param: Parametrisation, anchor, alpha: float,
                            h_variant: str = "H1", samples: Optional[int] = None, seed: int = 0) -> bool:
    """Whether ``f(g(x)) <= f(g^t(x)) + alpha * h(x, x^t)`` on all tested ``x``.

    ``H1``: ``h = ||x - x^t||^2``; ``H2``: ``h = ||g^t(x) - g(x^t)||^2`` (``H = I``).
    Exhaustive for ``k <= 12``, otherwise ``samples`` random vectors.
    """
    anchor = np.asarray(anchor).astype(np.int8)
    k = param.dim_params
    lin = linearize(param, anchor)
    g0 = param.evaluate(anchor)
    if k <= 12 and samples is None:
        xs = ((np.arange(2**k)[:, None] >> np.arange(k)[::-1]) & 1).astype(np.int8)
    else:
        xs = np.random.default_rng(seed).integers(0, 2, size=(samples or 10_000, k)).astype(np.int8)
    for x in xs:
        gt = lin.apply(x)
        if h_variant.upper() == "H1":
            h = float(np.sum((x - anchor) ** 2))
        elif h_variant.upper() == "H2":
            h = float(np.sum((gt - g0) ** 2))
        else:
            raise EngineError(f"unknown h variant {h_variant!r}")
        lhs = obj(param.evaluate(x))
        rhs = obj(gt) + alpha * h
        if lhs > rhs + 1e-9 * (1.0 + abs(lhs)):
            return False
    return True


def exact_config() -> SolveConfig:
    return SolveConfig(backend=Backend.EXACT)
