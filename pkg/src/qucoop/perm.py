"""Binary parametrisation of permutation matrices by ordered transpositions.

Every ``n x n`` permutation matrix is written as the left-to-right product
``P(x) = T_1^{x_1} T_2^{x_2} ... T_k^{x_k}`` over the ``k = n(n-1)/2``
transpositions in canonical order ``(1,2), (1,3), ..., (1,n), (2,3), ..., (n-1,n)``.
Each factor has the smooth extension ``P_i(x_i) = I + x_i (T_i - I)``, which
is what the Jacobian differentiates.

Internally a permutation is an index array ``s`` with ``P[s[c], c] = 1``
(column ``c`` of ``P`` is the unit vector ``e_{s[c]}``), so that matrix
products correspond to function composition ``(AB) -> s_A[s_B]``.
Matrices are vectorized row-major throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class PermutationError(ValueError):
    pass


@dataclass(frozen=True)
class TranspositionOrder:
    """The canonical ordered tuple of 2-cycles for permutations of size ``n``.

    ``cycles`` holds 1-indexed pairs ``(a, b)`` with ``a < b``; ``pairs`` holds
    the 0-indexed arrays used internally.
    """

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise PermutationError("n must be positive")

    @property
    def k(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def cycles(self) -> list[tuple[int, int]]:
        return [(int(a) + 1, int(b) + 1) for a, b in self.pairs]

    @property
    def pairs(self) -> np.ndarray:
        return _pairs(self.n)

    def index(self, a: int, b: int) -> int:
        """Canonical position of the 1-indexed pair ``(a, b)``."""
        a, b = min(a, b) - 1, max(a, b) - 1
        if not (0 <= a < b < self.n):
            raise PermutationError(f"invalid transposition ({a + 1}, {b + 1}) for n={self.n}")
        return a * self.n - a * (a + 1) // 2 + (b - a - 1)


@lru_cache(maxsize=None)
def _pairs(n: int) -> np.ndarray:
    out = np.array([(a, b) for a in range(n) for b in range(a + 1, n)], dtype=np.intp).reshape(-1, 2)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PermutationCode:
    order: TranspositionOrder
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(np.int8).reshape(-1)
        if bits.shape[0] != self.order.k:
            raise PermutationError(f"expected {self.order.k} bits, got {bits.shape[0]}")
        if not np.all((bits == 0) | (bits == 1)):
            raise PermutationError("bits must be binary")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bits(cls, n: int, bits) -> "PermutationCode":
        return cls(TranspositionOrder(n), bits)


# -- index-array helpers ----------------------------------------------------

def to_matrix(s: np.ndarray) -> np.ndarray:
    n = len(s)
    M = np.zeros((n, n))
    M[s, np.arange(n)] = 1.0
    return M


def from_matrix(P) -> np.ndarray:
    """Index array of a permutation matrix; raises if ``P`` is not one."""
    P = np.asarray(P)
    if not is_valid_permutation(P):
        raise PermutationError("not a permutation matrix")
    return np.argmax(P, axis=0).astype(np.intp)


def to_image(P) -> list[int]:
    """1-indexed image list ``pi`` with ``P[i, pi(i)] = 1`` (QAPLIB convention)."""
    P = np.asarray(P)
    if not is_valid_permutation(P):
        raise PermutationError("not a permutation matrix")
    return [int(j) + 1 for j in np.argmax(P, axis=1)]


def from_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.intp) - 1
    n = len(image)
    if sorted(image.tolist()) != list(range(n)):
        raise PermutationError(f"not a permutation image list: {list(image + 1)}")
    P = np.zeros((n, n))
    P[np.arange(n), image] = 1.0
    return P


def _prefix_suffix(bits: np.ndarray, n: int):
    """Index arrays of ``prod_{j<i} T_j^{x_j}`` and ``prod_{j>i} T_j^{x_j}`` for every i."""
    pairs = _pairs(n)
    k = len(pairs)
    prefix = np.empty((k + 1, n), dtype=np.intp)
    prefix[0] = np.arange(n)
    for i, (a, b) in enumerate(pairs):
        prefix[i + 1] = prefix[i]
        if bits[i]:
            # right-multiplying by T swaps columns a and b
            prefix[i + 1, [a, b]] = prefix[i, [b, a]]
    suffix = np.empty((k + 1, n), dtype=np.intp)
    suffix[k] = np.arange(n)
    for i in range(k - 1, -1, -1):
        a, b = pairs[i]
        suffix[i] = suffix[i + 1]
        if bits[i]:
            # left-multiplying by T relabels a <-> b
            t = suffix[i].copy()
            t[suffix[i + 1] == a] = b
            t[suffix[i + 1] == b] = a
            suffix[i] = t
    return prefix, suffix


def _index_of(code: PermutationCode) -> np.ndarray:
    prefix, _ = _prefix_suffix(code.bits, code.order.n)
    return prefix[-1]


# -- operations ---------------------------------------------------------------

def apply(code: PermutationCode) -> np.ndarray:
    """The permutation matrix ``prod_i T_i^{x_i}`` (left-to-right product)."""
    return to_matrix(_index_of(code))


def decompose(P, order: TranspositionOrder | None = None) -> np.ndarray:
    """Bits ``x`` with ``apply(x) == P``.

    Each disjoint cycle is rotated to start at its minimal element ``m`` and
    peeled as ``(m h2 ... hl) = (m h2)(h3 ... hl h2)``; the emitted 2-cycles
    have strictly increasing first elements within a cycle and commute across
    cycles, so sorting them yields the canonical order.
    """
    s = from_matrix(P)
    n = len(s)
    order = order or TranspositionOrder(n)
    if order.n != n:
        raise PermutationError(f"order is for n={order.n}, matrix has n={n}")
    bits = np.zeros(order.k, dtype=np.int8)
    seen = np.zeros(n, dtype=bool)
    for start in range(n):
        if seen[start]:
            continue
        cyc = [start]
        seen[start] = True
        j = s[start]
        while j != start:
            cyc.append(int(j))
            seen[j] = True
            j = s[j]
        while len(cyc) > 1:
            m = int(np.argmin(cyc))
            cyc = cyc[m:] + cyc[:m]
            bits[order.index(cyc[0] + 1, cyc[1] + 1)] = 1
            cyc = cyc[2:] + cyc[1:2]
    return bits


def jacobian(code: PermutationCode) -> np.ndarray:
    """``k x n^2`` matrix whose row ``i`` is ``vec(dP/dx_i)`` at a binary point."""
    n, k = code.order.n, code.order.k
    prefix, suffix = _prefix_suffix(code.bits, n)
    J = np.zeros((k, n * n))
    cols = np.arange(n)
    for i, (a, b) in enumerate(_pairs(n)):
        L, R = prefix[i], suffix[i + 1]
        # L (T - I) R: columns c of R with R[c] in {a, b} move
        for c in cols[(R == a) | (R == b)]:
            src = R[c]
            dst = b if src == a else a
            J[i, L[src] * n + c] -= 1.0
            J[i, L[dst] * n + c] += 1.0
    return J


def evaluate_real(x, n: int) -> np.ndarray:
    """Smooth extension ``prod_i (I + x_i (T_i - I))`` at a real vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    M = np.eye(n)
    for xi, (a, b) in zip(x, _pairs(n)):
        if xi != 0.0:
            # M (I + xi (T - I)) = M + xi (M T - M); M T swaps columns a, b
            ca, cb = M[:, a].copy(), M[:, b].copy()
            M[:, a] += xi * (cb - ca)
            M[:, b] += xi * (ca - cb)
    return M


def jacobian_real(x, n: int) -> np.ndarray:
    """Jacobian of :func:`evaluate_real` at an arbitrary real point (dense, O(k n^3))."""
    x = np.asarray(x, dtype=np.float64)
    pairs = _pairs(n)
    k = len(pairs)
    factors = []
    for xi, (a, b) in zip(x, pairs):
        F = np.eye(n)
        T = np.eye(n)
        T[[a, b]] = T[[b, a]]
        factors.append((F + xi * (T - F), T - F))
    prefix = [np.eye(n)]
    for F, _ in factors:
        prefix.append(prefix[-1] @ F)
    suffix = [np.eye(n)]
    for F, _ in reversed(factors):
        suffix.append(F @ suffix[-1])
    suffix = suffix[::-1]
    J = np.empty((k, n * n))
    for i, (_, D) in enumerate(factors):
        J[i] = (prefix[i] @ D @ suffix[i + 1]).reshape(-1)
    return J


def is_valid_permutation(M) -> bool:
    """True iff ``M`` is square with 0/1 entries and unit row and column sums."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    if not np.all((M == 0) | (M == 1)):
        return False
    return bool(np.all(M.sum(axis=0) == 1) and np.all(M.sum(axis=1) == 1))


def rowcol_sums(M) -> tuple[np.ndarray, np.ndarray]:
    M = np.asarray(M)
    if np.issubdtype(M.dtype, np.floating):
        M = np.rint(M).astype(np.int64)
    return M.sum(axis=1), M.sum(axis=0)


def linearized(anchor, x, n: int) -> np.ndarray:
    """``P^t(x) = P(x^t) + <grad P(x^t), x - x^t>`` as an ``n x n`` matrix."""
    code = PermutationCode.from_bits(n, anchor)
    d = np.asarray(x, dtype=np.float64) - code.bits
    return apply(code) + (d @ jacobian(code)).reshape(n, n)


def conjugated_supports(anchor, candidate, order: TranspositionOrder) -> list[tuple[int, int]]:
    """Supports of ``C_i = L_i T_i L_i^{-1}`` for every index where the vectors differ.

    ``L_i`` is the prefix product of the anchor's factors before ``i``; the
    conjugate of a transposition ``(a b)`` is ``(L(a) L(b))``.
    """
    anchor = np.asarray(anchor).astype(np.int8)
    candidate = np.asarray(candidate).astype(np.int8)
    if anchor.shape != (order.k,) or candidate.shape != (order.k,):
        raise PermutationError(f"both bit vectors must have length {order.k}")
    prefix, _ = _prefix_suffix(anchor, order.n)
    out = []
    for i in np.nonzero(anchor != candidate)[0]:
        a, b = order.pairs[i]
        L = prefix[i]
        out.append((int(L[a]), int(L[b])))
    return out


def disjoint_conjugates_check(anchor, candidate, order: TranspositionOrder) -> bool:
    """Whether the conjugated 2-cycles of all changed indices are pairwise disjoint.

    This holds exactly when the linearized iterate ``P^t(candidate)`` is a
    valid permutation matrix.
    """
    used: set[int] = set()
    for a, b in conjugated_supports(anchor, candidate, order):
        if a in used or b in used:
            return False
        used.update((a, b))
    return True
