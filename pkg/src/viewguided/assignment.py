"""Square linear assignment: forward auction with epsilon scaling, plus two
exact solvers (permutation enumeration and Hungarian) used as oracles.

All solvers minimise the total cost of a cost matrix ``C``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EXHAUSTIVE_LIMIT = 9
HUNGARIAN_LIMIT = 256
SCALING_FACTOR = 4.0
EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class Assignment:
    """Bijection ``i -> mapping[i]`` and the summed cost of its pairs."""

    mapping: np.ndarray
    total_cost: float

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.intp)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(len(m))):
            raise ValueError("mapping is not a bijection")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    def __len__(self) -> int:
        return len(self.mapping)

    @property
    def mean_cost(self) -> float:
        return self.total_cost / len(self.mapping)


def assignment_cost(C: np.ndarray, mapping: np.ndarray) -> float:
    return float(np.sum(C[np.arange(len(mapping)), mapping]))


def _check_square(C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"size mismatch: cost matrix has shape {C.shape}")
    if C.shape[0] == 0:
        raise ValueError("empty cost matrix")
    return C


def _lower_bound(C: np.ndarray) -> float:
    return max(float(C.min(axis=1).sum()), float(C.min(axis=0).sum()), 0.0)


def _auction_phase(benefit: np.ndarray, prices: np.ndarray, eps: float) -> np.ndarray:
    """Jacobi forward auction to a full assignment; updates ``prices`` in place."""
    n = benefit.shape[0]
    person_of = np.full(n, -1, dtype=np.intp)
    object_of = np.full(n, -1, dtype=np.intp)
    unassigned = np.arange(n)
    while unassigned.size:
        V = benefit[unassigned] - prices
        rows = np.arange(unassigned.size)
        best = np.argmax(V, axis=1)
        V[rows, best] = -np.inf
        v2 = V.max(axis=1)
        bid = benefit[unassigned, best] - v2 + eps
        # per object the highest bid wins; equal bids go to the lowest person
        order = np.lexsort((unassigned, -bid, best))
        obj_sorted = best[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = obj_sorted[1:] != obj_sorted[:-1]
        win = order[first]
        objs = best[win]
        winners = unassigned[win]
        prices[objs] = bid[win]
        evicted = person_of[objs]
        evicted = evicted[evicted >= 0]
        object_of[evicted] = -1
        person_of[objs] = winners
        object_of[winners] = objs
        lost = np.ones(unassigned.size, dtype=bool)
        lost[win] = False
        # order is irrelevant: ties are broken on person index, not position
        unassigned = np.concatenate([unassigned[lost], evicted])
    return object_of


def auction_assignment(C: np.ndarray, eps_target: float = 0.01) -> Assignment:
    """Assignment with total cost within ``(1 + eps_target)`` of optimal.

    Each scaling phase ends with an epsilon-optimal assignment, whose cost is at
    most ``opt + n * eps``. Phases stop as soon as a duality certificate or the
    ``n * eps <= eps_target * lower_bound`` rule proves the target, or once eps
    reaches ``EPS_FLOOR``.
    """
    C = _check_square(C)
    if not eps_target > 0:
        raise ValueError("eps_target must be positive")
    n = C.shape[0]
    if n == 1:
        return Assignment(np.zeros(1, dtype=np.intp), float(C[0, 0]))
    benefit = -C
    prices = np.zeros(n)
    lb = _lower_bound(C)
    eps = max(float(C.max() - C.min()) / 2.0, EPS_FLOOR)
    while True:
        mapping = _auction_phase(benefit, prices, eps)
        cost = assignment_cost(C, mapping)
        dual = float(np.max(benefit - prices, axis=1).sum() + prices.sum())
        lb = max(lb, -dual)
        if cost <= (1.0 + eps_target) * lb or n * eps <= eps_target * lb or eps <= EPS_FLOOR:
            return Assignment(mapping, cost)
        eps = max(eps / SCALING_FACTOR, EPS_FLOOR)


@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp)


def exhaustive_assignment(C: np.ndarray) -> Assignment:
    C = _check_square(C)
    n = C.shape[0]
    if n > EXHAUSTIVE_LIMIT:
        raise ValueError(f"exhaustive search limited to n <= {EXHAUSTIVE_LIMIT}")
    perms = _permutations(n)
    totals = C[np.arange(n), perms].sum(axis=1)
    mapping = perms[int(np.argmin(totals))]
    return Assignment(mapping, assignment_cost(C, mapping))


def hungarian_assignment(C: np.ndarray) -> Assignment:
    """O(n^3) shortest augmenting path Hungarian method with potentials."""
    C = _check_square(C)
    n = C.shape[0]
    if n > HUNGARIAN_LIMIT:
        raise ValueError(f"Hungarian oracle limited to n <= {HUNGARIAN_LIMIT}")
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = C[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    mapping = np.empty(n, dtype=np.intp)
    mapping[p[1:] - 1] = np.arange(n)
    return Assignment(mapping, assignment_cost(C, mapping))


def exact_assignment(C: np.ndarray) -> Assignment:
    C = _check_square(C)
    if C.shape[0] <= EXHAUSTIVE_LIMIT:
        return exhaustive_assignment(C)
    return hungarian_assignment(C)
