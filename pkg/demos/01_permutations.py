"""Permutations as products of switchable transpositions.

Walks through the binary encoding used by the solver: build a permutation
from bits, take it apart again, and look at what one linearized step can and
cannot reach.
"""
import numpy as np

from qucoop import perm

n = 4
order = perm.TranspositionOrder(n)
print("transpositions in order:", order.cycles)  # (1,2), (1,3), ..., (3,4)

# every bit switches one factor on or off; the product is taken left to right
bits = np.array([1, 0, 0, 0, 1, 1])
P = perm.apply(perm.PermutationCode(order, bits))
print("P(x) =\n", P.astype(int))
print("as an image list:", perm.to_image(P))

# going back: decompose peels each cycle at its smallest element
back = perm.decompose(P, order)
print("decomposed bits:", back, "same matrix:", np.array_equal(perm.apply(perm.PermutationCode(order, back)), P))

# the Jacobian row of bit i moves exactly two entries up and two down
J = perm.jacobian(perm.PermutationCode(order, bits))
print("nonzeros per row:", (J != 0).sum(axis=1))

# linearize at the identity and flip two bits
for flips in ([0, 5], [0, 1]):
    x = np.zeros(order.k, dtype=int)
    x[flips] = 1
    M = perm.linearized(np.zeros(order.k), x, n)
    rows, cols = perm.rowcol_sums(M)
    print(f"flip {[order.cycles[i] for i in flips]}: rows {rows}, cols {cols}, "
          f"valid={perm.is_valid_permutation(M)}, "
          f"disjoint conjugates={perm.disjoint_conjugates_check(np.zeros(order.k), x, order)}")
# (1,2) with (3,4) commute and give a valid matrix; (1,2) with (1,3) overlap
# and give an integer matrix with unit sums that is not a permutation.
