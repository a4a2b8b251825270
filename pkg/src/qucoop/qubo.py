"""QUBO instances and two interchangeable solver backends.

A QUBO here is ``E(x) = x^T Q x + b^T x + offset`` over ``x in {0,1}^k`` with a
symmetric coupling matrix ``Q``.  The offset is carried along so that reported
energies equal true objective values of whatever problem produced the QUBO.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

EXACT_MAX_K = 26


class QuboError(ValueError):
    """Raised for malformed instances or solver configurations."""


class SizeLimitError(QuboError):
    pass


class Backend(str, enum.Enum):
    SIMULATED_ANNEALING = "sa"
    EXACT = "exact"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuboInstance:
    """Symmetric coupling matrix, bias vector and constant offset.

    The coupling is symmetrized on construction, so passing any square matrix
    ``M`` is equivalent to passing ``(M + M.T) / 2``.
    """

    coupling: np.ndarray
    bias: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        Q = np.asarray(self.coupling, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise QuboError(f"coupling must be square, got shape {Q.shape}")
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if b.shape[0] != Q.shape[0]:
            raise QuboError(f"bias has length {b.shape[0]}, expected {Q.shape[0]}")
        off = float(self.offset)
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(b)) and np.isfinite(off)):
            raise QuboError("QUBO entries must be finite")
        object.__setattr__(self, "coupling", _frozen(0.5 * (Q + Q.T)))
        object.__setattr__(self, "bias", _frozen(b))
        object.__setattr__(self, "offset", off)

    @property
    def k(self) -> int:
        return self.coupling.shape[0]

    @classmethod
    def zeros(cls, k: int, offset: float = 0.0) -> "QuboInstance":
        return cls(np.zeros((k, k)), np.zeros(k), offset)


@dataclass(frozen=True)
class SolveConfig:
    """Solver settings.

    ``beta_schedule`` is ``(beta_start, beta_end)`` with geometric interpolation
    over the sweeps.  When left as ``None`` the range is derived from the
    instance coefficients (hot enough to accept the largest single-flip uphill
    move half the time, cold enough to reject the smallest one with 99%).
    """

    backend: Backend = Backend.SIMULATED_ANNEALING
    num_reads: int = 50
    num_sweeps: int = 1000
    beta_schedule: Optional[tuple[float, float]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "backend", Backend(self.backend))
        if int(self.num_reads) < 1:
            raise QuboError("num_reads must be >= 1")
        if int(self.num_sweeps) < 1:
            raise QuboError("num_sweeps must be >= 1")
        if self.beta_schedule is not None:
            b0, b1 = (float(v) for v in self.beta_schedule)
            if not (0 < b0 < b1 and np.isfinite(b1)):
                raise QuboError(f"invalid beta schedule {self.beta_schedule}: need 0 < start < end")
            object.__setattr__(self, "beta_schedule", (b0, b1))
        if not 0 <= int(self.seed) < 2**64:
            raise QuboError("seed must be a 64-bit unsigned integer")

    def with_seed(self, seed: int) -> "SolveConfig":
        return SolveConfig(self.backend, self.num_reads, self.num_sweeps, self.beta_schedule, int(seed) % 2**64)


@dataclass(frozen=True, eq=False)
class Sample:
    bits: np.ndarray
    energy: float
    info: dict = field(default_factory=dict)


def energy(instance: QuboInstance, bits) -> float:
    """Evaluate ``bits^T Q bits + b^T bits + offset`` in double precision."""
    x = np.asarray(bits, dtype=np.float64).reshape(-1)
    if x.shape[0] != instance.k:
        raise QuboError(f"bit vector has length {x.shape[0]}, instance has k={instance.k}")
    return float(x @ instance.coupling @ x + instance.bias @ x + instance.offset)


def default_beta_range(instance: QuboInstance) -> tuple[float, float]:
    Q, b = instance.coupling, instance.bias
    diag = b + np.diag(Q)
    off = 2.0 * (np.abs(Q).sum(axis=1) - np.abs(np.diag(Q)))
    max_delta = float(np.max(np.abs(diag) + off)) if instance.k else 0.0
    coeffs = np.concatenate([np.abs(diag), 2.0 * np.abs(Q[np.triu_indices(instance.k, 1)])])
    coeffs = coeffs[coeffs > 1e-12 * max(max_delta, 1.0)]
    if max_delta <= 0 or coeffs.size == 0:
        return 0.1, 1.0
    hot = np.log(2.0) / max_delta
    cold = np.log(100.0) / float(coeffs.min())
    if cold <= hot:
        cold = 10.0 * hot
    return float(hot), float(cold)


@numba.njit(cache=True, nogil=True)
def _anneal_read(Q, diag, betas, seed, trace):
    k = Q.shape[0]
    np.random.seed(seed)
    x = np.zeros(k, dtype=np.int8)
    for i in range(k):
        if np.random.random() < 0.5:
            x[i] = 1
    # field[i] = 2 * sum_{j != i} Q[i, j] x[j]
    field = np.zeros(k)
    e = 0.0
    for i in range(k):
        if x[i]:
            e += diag[i]
            for j in range(k):
                if j != i:
                    field[j] += 2.0 * Q[j, i]
    for i in range(k):
        if x[i]:
            for j in range(i + 1, k):
                if x[j]:
                    e += 2.0 * Q[i, j]
    order = np.random.permutation(k)
    best = e
    best_x = x.copy()
    for s in range(betas.shape[0]):
        beta = betas[s]
        for p in range(k):
            i = order[p]
            delta = diag[i] + field[i]
            if x[i]:
                delta = -delta
            if delta <= 0.0 or np.random.random() < np.exp(-beta * delta):
                sgn = 1.0 if x[i] == 0 else -1.0
                x[i] = 1 - x[i]
                e += delta
                for j in range(k):
                    if j != i:
                        field[j] += 2.0 * Q[j, i] * sgn
                if e < best:
                    best = e
                    best_x[:] = x
        if trace.shape[0] > 0:
            trace[s] = best
    return best_x, best


@numba.njit(cache=True, nogil=True)
def _exhaustive(Q, diag, k):
    # Gray-code walk; ties resolved towards the lexicographically smallest vector
    x = np.zeros(k, dtype=np.int8)
    field = np.zeros(k)
    e = 0.0
    best = 0.0
    best_x = np.zeros(k, dtype=np.int8)
    scale = 1.0
    for i in range(k):
        scale += abs(diag[i])
        for j in range(k):
            scale += abs(Q[i, j])
    tol = 1e-12 * scale
    total = 1 << k
    for g in range(1, total):
        # bit that changes between gray(g-1) and gray(g)
        i = 0
        t = g
        while (t & 1) == 0:
            t >>= 1
            i += 1
        delta = diag[i] + field[i]
        sgn = 1.0
        if x[i]:
            delta = -delta
            sgn = -1.0
        x[i] = 1 - x[i]
        e += delta
        for j in range(k):
            if j != i:
                field[j] += 2.0 * Q[j, i] * sgn
        if e < best - tol:
            best = e
            best_x[:] = x
        elif e <= best + tol:
            smaller = False
            for j in range(k):
                if x[j] != best_x[j]:
                    smaller = x[j] < best_x[j]
                    break
            if smaller:
                best = min(best, e)
                best_x[:] = x
    return best_x


def _betas(instance: QuboInstance, config: SolveConfig) -> np.ndarray:
    b0, b1 = config.beta_schedule or default_beta_range(instance)
    return np.geomspace(b0, b1, int(config.num_sweeps))


def _read_seeds(config: SolveConfig) -> np.ndarray:
    ss = np.random.SeedSequence(int(config.seed))
    return ss.generate_state(int(config.num_reads), dtype=np.uint32).astype(np.int64)


def solve(instance: QuboInstance, config: SolveConfig = SolveConfig()) -> Sample:
    """Minimize ``instance`` with the configured backend.

    The exact backend enumerates all ``2**k`` assignments (``k <= 26``) and
    returns the lexicographically smallest global minimizer.  Simulated
    annealing returns the best of ``num_reads`` independent reads and is
    deterministic given the config seed.
    """
    k = instance.k
    if k == 0:
        return Sample(np.zeros(0, dtype=np.int8), instance.offset)
    Q = np.ascontiguousarray(instance.coupling)
    diag = np.ascontiguousarray(instance.bias + np.diag(Q))
    if config.backend is Backend.EXACT:
        if k > EXACT_MAX_K:
            raise SizeLimitError(f"exact backend supports k <= {EXACT_MAX_K}, got k={k}")
        bits = _exhaustive(Q, diag, k)
        return Sample(bits, energy(instance, bits), {"backend": "exact"})
    betas = _betas(instance, config)
    no_trace = np.zeros(0)
    best_bits, best_e = None, np.inf
    for seed in _read_seeds(config):
        bits, _ = _anneal_read(Q, diag, betas, seed, no_trace)
        e = energy(instance, bits)
        if e < best_e:
            best_bits, best_e = bits, e
    return Sample(best_bits, best_e, {"backend": "sa", "beta_range": (betas[0], betas[-1])})


def anneal_trace(instance: QuboInstance, config: SolveConfig, read: int = 0):
    """Run a single annealing read and return ``(bits, tracked_energy, best_per_sweep)``.

    ``tracked_energy`` is the best energy as maintained by the incremental
    delta updates (offset included); comparing it with :func:`energy` checks
    the bookkeeping.
    """
    Q = np.ascontiguousarray(instance.coupling)
    diag = np.ascontiguousarray(instance.bias + np.diag(Q))
    betas = _betas(instance, config)
    trace = np.zeros(betas.shape[0])
    seed = _read_seeds(config)[read]
    bits, best = _anneal_read(Q, diag, betas, seed, trace)
    return bits, best + instance.offset, trace + instance.offset


def solve_batch(instances: Sequence[QuboInstance], config: SolveConfig = SolveConfig(),
                workers: int = 1) -> list[Sample]:
    """Element-wise :func:`solve`; results do not depend on batch order or ``workers``."""

    def one(item):
        idx, inst = item
        try:
            return solve(inst, config)
        except QuboError as exc:
            raise type(exc)(f"instance {idx}: {exc}") from exc

    items = list(enumerate(instances))
    if workers <= 1 or len(items) <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))


def dumps(instance: QuboInstance) -> str:
    """Serialize to the plain-text dump format.

    Line 1 is ``k``; then ``i j value`` for every nonzero upper-triangular entry
    of the symmetric coupling matrix (diagonal included), ``b i value`` for
    every nonzero bias, and a final ``offset value``.  Indices are 0-based.
    """
    lines = [str(instance.k)]
    Q = instance.coupling
    for i, j in zip(*np.nonzero(np.triu(Q))):
        lines.append(f"{i} {j} {float(Q[i, j])!r}")
    for i in np.nonzero(instance.bias)[0]:
        lines.append(f"b {i} {float(instance.bias[i])!r}")
    lines.append(f"offset {float(instance.offset)!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> QuboInstance:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise QuboError("empty QUBO dump")
    try:
        k = int(rows[0][0])
        Q = np.zeros((k, k))
        b = np.zeros(k)
        offset = 0.0
        for row in rows[1:]:
            if row[0] == "b":
                b[int(row[1])] = float(row[2])
            elif row[0] == "offset":
                offset = float(row[1])
            else:
                i, j, v = int(row[0]), int(row[1]), float(row[2])
                Q[i, j] = Q[j, i] = v
    except (ValueError, IndexError) as exc:
        raise QuboError(f"malformed QUBO dump: {exc}") from exc
    return QuboInstance(Q, b, offset)
