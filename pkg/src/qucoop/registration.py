"""Rigid point-set registration without correspondences.

Finds a rotation ``R`` and permutation ``P`` minimizing ``||X P - R Y||_F^2``
for a reference set ``X`` and template ``Y`` (both ``d x n``).  The ambient
vector is ``(vec P, vec R)``; ``P`` uses the transposition parametrisation and
``R = exp(M(y))`` with every rotation coordinate discretized to ``m`` bits
over an interval that is re-centered and halved after each iteration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import perm as _perm
from .engine import (IterationRecord, Parametrisation, QuadraticObjective, RunRecord, step)
from .qubo import SolveConfig


class RegistrationError(ValueError):
    pass


def _check_d(d: int):
    if d not in (2, 3):
        raise RegistrationError(f"only d in (2, 3) is supported, got d={d}")


def n_rot(d: int) -> int:
    return d * (d - 1) // 2


@dataclass(frozen=True, eq=False)
class PointSetPair:
    """Reference ``X`` and template ``Y`` as ``d x n`` arrays (points are columns)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or X.shape != Y.shape:
            raise RegistrationError(f"X and Y must be d x n of equal shape, got {X.shape} and {Y.shape}")
        _check_d(X.shape[0])
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_points(cls, ref, tmpl) -> "PointSetPair":
        """Build from ``n x d`` point arrays, zero-padding the smaller set at the origin."""
        ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
        tmpl = np.atleast_2d(np.asarray(tmpl, dtype=np.float64))
        if ref.shape[1] != tmpl.shape[1]:
            raise RegistrationError("point sets must have the same dimension")
        n = max(len(ref), len(tmpl))
        pad = lambda a: np.vstack([a, np.zeros((n - len(a), a.shape[1]))])
        return cls(pad(ref).T, pad(tmpl).T)


def skew(y, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if d == 2:
        return np.array([[0.0, -y[0]], [y[0], 0.0]])
    return np.array([[0.0, -y[2], y[1]], [y[2], 0.0, -y[0]], [-y[1], y[0], 0.0]])


def rotation_matrix(y, d: int) -> np.ndarray:
    """``exp(M(y))``: planar rotation by ``y[0]`` for ``d = 2``, Rodrigues' formula for ``d = 3``."""
    _check_d(d)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n_rot(d):
        raise RegistrationError(f"expected {n_rot(d)} rotation coordinates, got {y.shape[0]}")
    if d == 2:
        c, s = np.cos(y[0]), np.sin(y[0])
        return np.array([[c, -s], [s, c]])
    K = skew(y, 3)
    th = np.linalg.norm(y)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1.0 - np.cos(th)) / th**2 * K @ K


def _right_jacobian(y) -> np.ndarray:
    th = np.linalg.norm(y)
    K = skew(y, 3)
    if th < 1e-4:
        a = 0.5 - th**2 / 24.0
        b = 1.0 / 6.0 - th**2 / 120.0
    else:
        a = (1.0 - np.cos(th)) / th**2
        b = (th - np.sin(th)) / th**3
    return np.eye(3) - a * K + b * K @ K


def rotation_jacobian(y, d: int) -> np.ndarray:
    """``k_r x d^2`` matrix; row ``j`` is the row-major ``vec(dR/dy_j)``.

    In 3D ``dR/dy_j = R [J_r(y) e_j]_x`` with the right Jacobian of SO(3).
    """
    _check_d(d)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if d == 2:
        c, s = np.cos(y[0]), np.sin(y[0])
        return np.array([[-s, -c, c, -s]])
    R = rotation_matrix(y, 3)
    Jr = _right_jacobian(y)
    return np.stack([(R @ skew(Jr[:, j], 3)).reshape(-1) for j in range(3)])


def rotation_angle(R) -> float:
    """Rotation angle in radians of a 2D or 3D rotation matrix."""
    R = np.asarray(R)
    if R.shape == (2, 2):
        return float(abs(np.arctan2(R[1, 0] - R[0, 1], R[0, 0] + R[1, 1])))
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def nearest_rotation(M) -> np.ndarray:
    """Orthogonal polar factor of ``M`` with the determinant forced to +1."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.eye(U.shape[0])
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class RotationCode:
    """``m``-bit discretization of each rotation coordinate over ``[lo_j, hi_j]``.

    Bits are most-significant first within each coordinate.
    """

    m: int
    lo: np.ndarray
    hi: np.ndarray
    bits: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if self.m < 1 or lo.shape != hi.shape or np.any(hi < lo):
            raise RegistrationError("need m >= 1 and lo <= hi per coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        bits = np.zeros(self.m * len(lo), dtype=np.int8) if self.bits is None else np.asarray(self.bits).astype(np.int8)
        if bits.shape != (self.m * len(lo),):
            raise RegistrationError(f"expected {self.m * len(lo)} bits")
        object.__setattr__(self, "bits", bits)

    @property
    def k_r(self) -> int:
        return len(self.lo)

    @property
    def decode_matrix(self) -> np.ndarray:
        """``D`` with ``y = lo + bits @ D``."""
        w = (self.hi - self.lo) / (2**self.m - 1)
        place = 2.0 ** np.arange(self.m - 1, -1, -1)
        D = np.zeros((self.m * self.k_r, self.k_r))
        for j in range(self.k_r):
            D[j * self.m:(j + 1) * self.m, j] = place * w[j]
        return D

    @classmethod
    def anchored(cls, m: int, center, width) -> "RotationCode":
        """Interval of ``width`` placed so that the code ``100..0`` decodes exactly to ``center``."""
        center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        width = np.broadcast_to(np.asarray(width, dtype=np.float64), center.shape)
        lo = center - width * 2 ** (m - 1) / (2**m - 1)
        bits = np.tile(np.r_[1, np.zeros(m - 1)], len(center)).astype(np.int8)
        return cls(m, lo, lo + width, bits, center)


def decode_bits(code: RotationCode, bits=None) -> np.ndarray:
    """``y_j = lo_j + (hi_j - lo_j) * int_j / (2^m - 1)`` with ``int_j`` the MSB-first value of block ``j``."""
    b = np.asarray(code.bits if bits is None else bits, dtype=np.float64).reshape(code.k_r, code.m)
    ints = b @ (2.0 ** np.arange(code.m - 1, -1, -1))
    return code.lo + (code.hi - code.lo) * ints / (2**code.m - 1)


class JointParametrisation(Parametrisation):
    """``g(x, b) = (vec P(x), vec R(lo + b D))`` over ``k_p + m k_r`` bits."""

    def __init__(self, n: int, d: int, code: RotationCode):
        _check_d(d)
        if code.k_r != n_rot(d):
            raise RegistrationError(f"rotation code has {code.k_r} coordinates, d={d} needs {n_rot(d)}")
        self.n, self.d, self.code = n, d, code
        self.order = _perm.TranspositionOrder(n)
        self.k_p = self.order.k
        self._D = code.decode_matrix
        self.dim_params = self.k_p + len(code.bits)
        self.dim_ambient = n * n + d * d

    def split(self, x):
        x = np.asarray(x)
        return x[: self.k_p], x[self.k_p:]

    def decode(self, rot_bits) -> np.ndarray:
        return decode_bits(self.code, rot_bits)

    def _perm_part(self, xp, real: bool):
        binary = np.all((xp == 0) | (xp == 1))
        if binary and not real:
            code = _perm.PermutationCode(self.order, xp.astype(np.int8))
            return _perm.apply(code).reshape(-1), _perm.jacobian(code)
        return _perm.evaluate_real(xp, self.n).reshape(-1), _perm.jacobian_real(xp, self.n)

    def evaluate_real(self, x) -> np.ndarray:
        xp, xr = self.split(np.asarray(x, dtype=np.float64))
        return np.concatenate([_perm.evaluate_real(xp, self.n).reshape(-1),
                               rotation_matrix(self.decode(xr), self.d).reshape(-1)])

    def evaluate(self, bits) -> np.ndarray:
        xp, xr = self.split(np.asarray(bits))
        p, _ = self._perm_part(xp, real=False)
        return np.concatenate([p, rotation_matrix(self.decode(xr), self.d).reshape(-1)])

    def jacobian(self, x) -> np.ndarray:
        xp, xr = self.split(np.asarray(x))
        _, Jp = self._perm_part(xp, real=False)
        Jr = self._D @ rotation_jacobian(self.decode(xr), self.d)
        J = np.zeros((self.dim_params, self.dim_ambient))
        J[: self.k_p, : self.n * self.n] = Jp
        J[self.k_p:, self.n * self.n:] = Jr
        return J

    def is_feasible(self, v) -> bool:
        M = np.asarray(v)[: self.n * self.n].reshape(self.n, self.n)
        R = np.rint(M)
        return bool(np.allclose(M, R, atol=1e-8) and _perm.is_valid_permutation(R))

    def recover(self, bits, v) -> np.ndarray:
        # permutation block is exact; the rotation keeps its bits and is re-evaluated through exp
        M = np.rint(np.asarray(v)[: self.n * self.n].reshape(self.n, self.n))
        return np.concatenate([_perm.decompose(M, self.order), self.split(bits)[1]]).astype(np.int8)


def default_penalties(pair: PointSetPair) -> tuple[float, float]:
    return float(np.sum(pair.X**2)), 0.1 * float(np.sum(pair.Y**2))


def joint_objective(pair: PointSetPair, alpha: float, beta: float) -> QuadraticObjective:
    """Block quadratic ``[[alpha I, -1/2 K^T], [-1/2 K, beta I]]`` with ``K = X kron Y``.

    ``K`` is ``d^2 x n^2`` and ``vec(R)^T K vec(P) = <X P, R Y>_F``, so on
    feasible points the objective is ``alpha n + beta d - <X P, R Y>``.
    """
    if alpha < 0 or beta < 0:
        raise RegistrationError("alpha and beta must be >= 0")
    n, d = pair.n, pair.d
    K = np.kron(pair.X, pair.Y)
    Q = np.zeros((n * n + d * d, n * n + d * d))
    Q[: n * n, : n * n] = alpha * np.eye(n * n)
    Q[n * n:, n * n:] = beta * np.eye(d * d)
    Q[: n * n, n * n:] = -0.5 * K.T
    Q[n * n:, : n * n] = -0.5 * K
    return QuadraticObjective(Q)


def build_joint_problem(pair: PointSetPair, alpha: Optional[float] = None, beta: Optional[float] = None,
                        code_template: Optional[RotationCode] = None):
    a0, b0 = default_penalties(pair)
    alpha = a0 if alpha is None else alpha
    beta = b0 if beta is None else beta
    if code_template is None:
        code_template = RotationCode.anchored(default_bits(pair.d), np.zeros(n_rot(pair.d)), 2 * np.pi)
    return joint_objective(pair, alpha, beta), JointParametrisation(pair.n, pair.d, code_template)


def default_bits(d: int) -> int:
    return 10 if d == 2 else 4


@dataclass(frozen=True)
class RegistrationConfig:
    iterations: int = 15
    m: Optional[int] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    initial_width: float = 2 * np.pi
    solver: SolveConfig = SolveConfig(num_reads=20, num_sweeps=500)
    restarts: int = 9
    seed: int = 0


@dataclass
class RegistrationResult:
    R: np.ndarray
    P: np.ndarray
    y: np.ndarray
    record: RunRecord
    widths: list[float] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.record.best_objective


def register(pair: PointSetPair, config: RegistrationConfig = RegistrationConfig(),
             y0=None, perm_bits0=None) -> tuple[np.ndarray, np.ndarray, RunRecord]:
    res = register_full(pair, config, y0, perm_bits0)
    return res.R, res.P, res.record


def register_full(pair: PointSetPair, config: RegistrationConfig = RegistrationConfig(),
                  y0=None, perm_bits0=None) -> RegistrationResult:
    """Alternate QUBO steps with interval re-centering.

    Each iteration linearizes at the current ``(P, y)``, solves the joint
    QUBO, keeps the move only when it lowers the true objective, then
    re-centers the rotation interval at the current ``y`` and halves it.
    Restarts redraw the permutation bits uniformly but keep the rotation
    start, and the run with the lowest objective is returned.
    """
    d, n = pair.d, pair.n
    a0, b0 = default_penalties(pair)
    alpha = a0 if config.alpha is None else config.alpha
    beta = b0 if config.beta is None else config.beta
    obj = joint_objective(pair, alpha, beta)
    y = np.zeros(n_rot(d)) if y0 is None else np.atleast_1d(np.asarray(y0, dtype=np.float64))
    kp = n * (n - 1) // 2
    xp = np.zeros(kp, dtype=np.int8) if perm_bits0 is None else np.asarray(perm_bits0).astype(np.int8)
    runs = [_register_once(pair, obj, config, y, xp, config.seed, 0)]
    for r in range(1, config.restarts + 1):
        seed = config.seed + r
        start = np.random.default_rng([seed, r, 0]).integers(0, 2, size=kp).astype(np.int8)
        runs.append(_register_once(pair, obj, config, y, start, seed, r))
    best = min(runs, key=lambda res: res.objective)
    if config.restarts:
        best.record.runs = [res.record for res in runs]
    return best


def _register_once(pair, obj, config, y, xp, seed, restart) -> RegistrationResult:
    d, n = pair.d, pair.n
    m = config.m or default_bits(d)
    width = float(config.initial_width)
    rec = RunRecord(seed=seed, restart=restart)
    widths = []
    t_start = time.perf_counter()
    param = JointParametrisation(n, d, RotationCode.anchored(m, y, width))
    x = np.concatenate([xp, param.code.bits])
    v = param.evaluate(x)
    rec._track(IterationRecord(0, x.copy(), v, obj(v), None, True, 0.0))
    for t in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        sub_seed = int(np.random.SeedSequence([seed, restart, t]).generate_state(1, dtype=np.uint64)[0])
        nxt, info = step(obj, param, x, None, config.solver.with_seed(sub_seed),
                         use_reparametrisation=True, descent_safeguard=True)
        xp, xr = param.split(nxt)
        y = param.decode(xr)
        v = param.evaluate(nxt)
        rec._track(IterationRecord(t, nxt.copy(), v, obj(v), info.subproblem_energy, info.feasible,
                                   1e3 * (time.perf_counter() - t0)))
        widths.append(width)
        width *= 0.5
        param = JointParametrisation(n, d, RotationCode.anchored(m, y, width))
        x = np.concatenate([xp, param.code.bits])
    rec.wall_ms = 1e3 * (time.perf_counter() - t_start)
    P = _perm.apply(_perm.PermutationCode(_perm.TranspositionOrder(n), xp))
    R = nearest_rotation(rotation_matrix(y, d))
    return RegistrationResult(R, P, y, rec, widths)


def synth_pair(n: int, d: int, angle_deg: float, seed: int, noise: float = 0.0):
    """Template ``Y = R0 X P0`` for random ``X``; returns ``(pair, R_true, P_true)``.

    The registration solution is ``R = R0^T`` and ``P = P0``.  In 3D the
    rotation axis is uniformly random.
    """
    _check_d(d)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n))
    th = np.deg2rad(angle_deg)
    if d == 2:
        R0 = rotation_matrix([th], 2)
    else:
        axis = rng.standard_normal(3)
        R0 = rotation_matrix(th * axis / np.linalg.norm(axis), 3)
    P0 = np.eye(n)[rng.permutation(n)]
    Y = R0 @ X @ P0 + noise * rng.standard_normal((d, n))
    return PointSetPair(X, Y), R0.T, P0


def rotation_error_deg(R, R_true) -> float:
    return float(np.rad2deg(rotation_angle(np.asarray(R) @ np.asarray(R_true).T)))
