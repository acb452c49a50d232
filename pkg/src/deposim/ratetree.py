"""Flat-array sum tree for O(log n) event selection.

Leaves hold nonnegative event rates; internal node i holds the sum of its
children 2i and 2i+1, with the total at index 1.  Every leaf update rewrites
the path to the root with fresh pairwise sums, so the root is always an
exact pairwise sum of the current leaves rather than an incrementally
drifting total.  Selection descends from the root comparing against left
subtree sums; given u strictly below the root it always lands on a leaf
with positive rate.

The njit helpers take the raw array plus its leaf capacity so the
simulation kernels can inline them; the SumTree class wraps the same array
for tests and interactive use.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def tree_alloc(n_leaves: int) -> tuple[np.ndarray, int]:
    cap = 1
    while cap < n_leaves:
        cap *= 2
    return np.zeros(2 * cap), cap


@njit(cache=True, nogil=True)
def tree_set(tree, cap, leaf, value):
    i = cap + leaf
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@njit(cache=True, nogil=True)
def tree_build(tree, cap):
    for i in range(cap - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True, nogil=True)
def tree_select(tree, cap, u):
    i = 1
    while i < cap:
        left = tree[2 * i]
        if u < left:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    return i - cap


@njit(cache=True, nogil=True)
def tree_drift(tree, cap):
    """Worst absolute mismatch between stored internal sums and a fresh
    bottom-up recomputation."""
    worst = 0.0
    for i in range(cap - 1, 0, -1):
        d = abs(tree[i] - (tree[2 * i] + tree[2 * i + 1]))
        if d > worst:
            worst = d
    return worst


class SumTree:
    def __init__(self, n_leaves: int):
        self.n_leaves = n_leaves
        self.tree, self.cap = tree_alloc(n_leaves)

    def set(self, leaf: int, value: float):
        if value < 0:
            raise ValueError("rates must be nonnegative")
        tree_set(self.tree, self.cap, leaf, value)

    def get(self, leaf: int) -> float:
        return float(self.tree[self.cap + leaf])

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def select(self, u: float) -> int:
        if not 0.0 <= u < self.total:
            raise ValueError("selection point outside [0, total)")
        return int(tree_select(self.tree, self.cap, u))

    def rebuild(self):
        tree_build(self.tree, self.cap)

    def drift(self) -> float:
        return float(tree_drift(self.tree, self.cap))
