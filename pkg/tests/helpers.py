"""Hand-buildable instances and independent reference oracles.

Everything here deliberately avoids the library's own solution paths:
the LP oracle goes through scipy.optimize.linprog, the tour oracle
enumerates permutations, and the full enumeration solver walks subsets
with itertools. They exist so the fast implementations have something
slow and obviously-correct to disagree with.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable

import numpy as np
from scipy.optimize import linprog

from tppsolve.model import Offer, TppInstance, Variant


def build_instance(
    depot=(0, 0),
    markets=((10, 0), (0, 10)),
    demands=(1,),
    offers={(1, 0): (5, 1), (2, 0): (7, 1)},
    variant="u",
    lam=None,
) -> TppInstance:
    return TppInstance(
        depot=tuple(depot),
        markets=tuple(tuple(m) for m in markets),
        demands=tuple(demands),
        offers={k: Offer(*v) for k, v in offers.items()},
        variant=Variant.parse(variant),
        lam=lam,
    )


def lp_purchase_cost(inst: TppInstance, visited: Iterable[int]) -> float | None:
    """Optimal purchase cost via one LP per product; None if infeasible."""
    vset = set(visited)
    total = 0.0
    for k, demand in enumerate(inst.demands):
        rows = [
            (off.price, off.quantity)
            for (i, kk), off in inst.offers.items()
            if kk == k and i in vset
        ]
        if sum(q for _, q in rows) < demand:
            return None
        c = [p for p, _ in rows]
        bounds = [(0, q) for _, q in rows]
        res = linprog(
            c,
            A_eq=[[1.0] * len(rows)],
            b_eq=[demand],
            bounds=bounds,
            method="highs",
        )
        if not res.success:
            return None
        total += res.fun
    return total


def tour_cost_by_permutation(dist: np.ndarray, nodes: list[int]) -> int:
    """Exact tour cost by trying every order. Keep nodes tiny."""
    best = math.inf
    for perm in itertools.permutations(nodes):
        cost = dist[0, perm[0]] + dist[perm[-1], 0]
        cost += sum(dist[a, b] for a, b in zip(perm, perm[1:]))
        best = min(best, int(cost))
    return int(best)


def full_enumeration_solve(inst: TppInstance) -> tuple[int, frozenset[int]]:
    """Reference optimum: subsets via itertools, tours via permutations,
    purchases via the LP oracle. Returns (objective, visited set)."""
    from tppsolve.model import distance_matrix

    M = inst.num_markets
    dist = distance_matrix(inst)
    best: tuple[int, tuple[int, ...]] | None = None
    for r in range(1, M + 1):
        for combo in itertools.combinations(range(1, M + 1), r):
            purchase = lp_purchase_cost(inst, combo)
            if purchase is None:
                continue
            obj = tour_cost_by_permutation(dist, list(combo)) + int(round(purchase))
            key = (obj, combo)
            if best is None or key < best:
                best = key
    assert best is not None, "valid instances always have the full set feasible"
    return best[0], frozenset(best[1])


def random_visited(inst: TppInstance, rng: np.random.Generator) -> tuple[int, ...]:
    size = int(rng.integers(1, inst.num_markets + 1))
    picks = rng.choice(inst.num_markets, size=size, replace=False)
    return tuple(sorted(int(i) + 1 for i in picks))
