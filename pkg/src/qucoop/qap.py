"""Quadratic assignment and graph matching in composite form.

Two objective conventions are used:

* Koopmans-Beckmann, ``trace(A P B P^T)``, minimized; the value QAPLIB
  optima are quoted in.
* graph matching, ``||A P - P B||_F^2``, equal on permutations to
  ``||A||^2 + ||B||^2 - 2 trace(A P B P^T)``, so it is minimized by
  *maximizing* the cross term.

With row-major vectorization ``<vec P, (A kron B) vec P> = trace(A P B P^T)``
for symmetric ``B``.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import perm as _perm
from .engine import PermutationParametrisation, QuadraticObjective


class QapParseError(ValueError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (at byte {offset})")


@dataclass(frozen=True, eq=False)
class QapInstance:
    A: np.ndarray
    B: np.ndarray
    name: str = ""
    known_optimal: Optional[float] = None
    certificate: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape != B.shape:
            raise ValueError(f"A and B must be square of equal size, got {A.shape} and {B.shape}")
        for label, M in (("A", A), ("B", B)):
            if np.abs(M - M.T).max(initial=0.0) > 1e-9:
                raise ValueError(f"{label} is not symmetric; asymmetric instances are not supported")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]


_TOKEN = re.compile(rb"\S+")


def parse_qaplib(text, name: str = "", known_optimal: Optional[float] = None) -> QapInstance:
    """Parse a QAPLIB ``.dat`` file: ``n`` followed by two ``n x n`` matrices, row-major."""
    data = text.encode() if isinstance(text, str) else bytes(text)
    tokens = [(m.start(), m.group()) for m in _TOKEN.finditer(data)]
    if not tokens:
        raise QapParseError("empty input", 0)
    pos, tok = tokens[0]
    try:
        n = int(tok)
    except ValueError:
        raise QapParseError(f"expected problem size, got {tok.decode(errors='replace')!r}", pos) from None
    if n <= 0:
        raise QapParseError(f"problem size must be positive, got {n}", pos)
    need = 2 * n * n
    body = tokens[1:]
    if len(body) < need:
        raise QapParseError(f"expected {need} matrix entries, found {len(body)} (truncated file?)", len(data))
    if len(body) > need:
        raise QapParseError(f"unexpected trailing token {body[need][1].decode(errors='replace')!r}", body[need][0])
    vals = np.empty(need)
    for i, (p, t) in enumerate(body):
        try:
            vals[i] = float(t)
        except ValueError:
            raise QapParseError(f"non-numeric token {t.decode(errors='replace')!r}", p) from None
    A = vals[: n * n].reshape(n, n)
    B = vals[n * n:].reshape(n, n)
    try:
        return QapInstance(A, B, name, known_optimal)
    except ValueError as exc:
        raise QapParseError(str(exc)) from None


def format_qaplib(instance: QapInstance) -> str:
    def mat(M):
        return "\n".join(" ".join(_num(v) for v in row) for row in M)

    return f"{instance.n}\n\n{mat(instance.A)}\n\n{mat(instance.B)}\n"


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def load_qaplib(path, known_optima: Optional[dict] = None) -> QapInstance:
    path = Path(path)
    name = path.stem
    opt = (known_optima or {}).get(name)
    return parse_qaplib(path.read_bytes(), name, opt)


def known_optima() -> dict:
    """Published optima for the QAPLIB instances used in the benchmarks."""
    with resources.files("qucoop.data").joinpath("qaplib_optima.json").open() as fh:
        return {k: v for k, v in json.load(fh).items() if not k.startswith("_")}


def known_solution(name: str) -> Optional[list[int]]:
    """Published optimal assignment (1-indexed image list) when bundled."""
    with resources.files("qucoop.data").joinpath("qaplib_optima.json").open() as fh:
        return json.load(fh).get("_solutions", {}).get(name)


def bundled_instance(name: str) -> QapInstance:
    res = resources.files("qucoop.data").joinpath(f"{name}.dat")
    return parse_qaplib(res.read_bytes(), name, known_optima().get(name))


def kb_objective(instance: QapInstance, P) -> float:
    P = np.asarray(P, dtype=np.float64)
    return float(np.trace(instance.A @ P @ instance.B @ P.T))


def gm_objective(instance: QapInstance, P) -> float:
    P = np.asarray(P, dtype=np.float64)
    R = instance.A @ P - P @ instance.B
    return float(np.sum(R * R))


def default_alpha(instance: QapInstance) -> float:
    """``|min eig(A kron B)|`` from the products of the factors' eigenvalues."""
    ea = np.linalg.eigvalsh(instance.A)
    eb = np.linalg.eigvalsh(instance.B)
    return float(abs(np.min(np.outer(ea, eb))))


def build_composite(instance: QapInstance, alpha: Optional[float] = None, sense: str = "min"):
    """Outer quadratic and permutation parametrisation for ``instance``.

    ``sense="min"`` minimizes ``trace(A P B P^T)`` (QAPLIB), giving
    ``Q = alpha I + A kron B``; ``sense="max"`` maximizes it (graph matching),
    giving ``Q = alpha I - A kron B``.  On permutations
    ``f(g(x)) = alpha n +/- trace(A P B P^T)``.
    """
    if alpha is None:
        alpha = default_alpha(instance)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    sign = 1.0 if sense == "min" else -1.0
    n = instance.n
    Q = alpha * np.eye(n * n) + sign * np.kron(instance.A, instance.B)
    return QuadraticObjective(Q), PermutationParametrisation(n)


def synth_instance(n: int, seed: int) -> QapInstance:
    """Distance matrix of ``n`` standard-normal points in the plane and a permuted copy.

    ``B = P^T A P`` for a uniformly random permutation ``P``, stored as the
    instance certificate, so the graph-matching optimum is 0.
    """
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 2))
    A = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    P = np.eye(n)[rng.permutation(n)]
    B = P.T @ A @ P
    B = 0.5 * (B + B.T)
    return QapInstance(A, B, f"synth{n}_s{seed}", 0.0, P)


def gap_percent(achieved: float, optimal: Optional[float]) -> Optional[float]:
    if optimal is None:
        return None
    if optimal == 0:
        return 0.0 if achieved == 0 else float("inf")
    return 100.0 * (achieved - optimal) / abs(optimal)


BENCH_COLUMNS = ["name", "n", "known_optimal", "achieved", "gap_percent", "iterations", "wall_ms", "seed"]


def bench_csv(rows: list[dict]) -> str:
    """CSV text for benchmark rows plus a ``MEAN`` row.

    The summary gap is the mean over instances of the best gap across that
    instance's seeds.
    """
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    best: dict[str, float] = {}
    for r in rows:
        w.writerow({c: _cell(r.get(c)) for c in BENCH_COLUMNS})
        g = r.get("gap_percent")
        if g is not None and np.isfinite(g):
            best[r["name"]] = min(g, best.get(r["name"], np.inf))
    if rows:
        w.writerow({"name": "MEAN", "gap_percent": _cell(float(np.mean(list(best.values()))) if best else None)})
    return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return _num(v) if v.is_integer() else f"{v:.6g}"
    return v


def perm_matrix(bits, n: int) -> np.ndarray:
    return _perm.apply(_perm.PermutationCode.from_bits(n, bits))
