"""Exact solvers and the MILP exporter.

Small instances are solved exactly by dynamic programming over market
subsets: one pass computes the optimal open path cost to every (subset,
last market) pair, after which any subset's optimal tour closes back to
the depot in O(|subset|). The purchaser objective for a subset is that
tour cost plus the optimal purchase cost, so the global optimum is a
minimum over all feasible subsets.

The exporter writes the arc-based mixed-integer formulation in LP text
format with the polynomial subtour elimination (sequencing variables),
so any off-the-shelf MILP solver can check our exact results.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

from .errors import SolverError
from .generate import dumps_instance
from .model import (
    Route,
    Solution,
    TppInstance,
    distance_matrix,
    route_travel_cost,
)
from .planner import optimal_purchase

INF = np.int64(2**62)
HELD_KARP_LIMIT = 13  # tour DP beyond this is not worth exactness
BRUTE_FORCE_LIMIT = 12  # default subset-enumeration guard


@lru_cache(maxsize=16)
def _mask_levels(s: int) -> tuple[np.ndarray, ...]:
    """All s-bit masks grouped by population count."""
    masks = np.arange(1 << s, dtype=np.int64)
    pc = np.zeros(1 << s, dtype=np.int64)
    for b in range(s):
        pc += (masks >> b) & 1
    return tuple(masks[pc == level] for level in range(s + 1))


def _subset_paths(sub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal open-path DP over all subsets.

    ``sub`` is the (s+1, s+1) distance matrix with the depot at row 0.
    Returns dp[mask, j] = cheapest depot-rooted path visiting exactly
    ``mask`` and ending at market j (0-based within the subset), plus
    the predecessor table for reconstruction.
    """
    s = sub.shape[0] - 1
    dp = np.full((1 << s, s), INF, dtype=np.int64)
    parent = np.full((1 << s, s), -1, dtype=np.int8)
    for j in range(s):
        dp[1 << j, j] = sub[0, j + 1]
    levels = _mask_levels(s)
    for level in range(1, s):
        masks = levels[level]
        for j in range(s):
            mj = masks[(masks >> j) & 1 == 1]
            base = dp[mj, j]
            ok = base < INF
            if not ok.any():
                continue
            mj, base = mj[ok], base[ok]
            for n in range(s):
                if n == j:
                    continue
                free = (mj >> n) & 1 == 0
                if not free.any():
                    continue
                src = mj[free]
                cand = base[free] + sub[j + 1, n + 1]
                tgt = src | (1 << n)
                cur = dp[tgt, n]
                better = cand < cur
                if better.any():
                    dp[tgt[better], n] = cand[better]
                    parent[tgt[better], n] = j
    return dp, parent


def _backtrack(parent: np.ndarray, mask: int, last: int) -> list[int]:
    order = [last]
    while True:
        prev = parent[mask, last]
        mask ^= 1 << last
        if prev < 0:
            break
        order.append(int(prev))
        last = int(prev)
    order.reverse()
    return order


def held_karp(dist: np.ndarray, nodes: list[int] | tuple[int, ...]) -> tuple[int, Route]:
    """Exact minimum tour through the given markets from the depot.

    ``dist`` is a full node distance matrix with the depot at index 0;
    ``nodes`` are the market indices to visit. Guarded to 13 markets.
    """
    nodes = list(nodes)
    if not nodes:
        raise ValueError("held_karp needs at least one market")
    if len(nodes) > HELD_KARP_LIMIT:
        raise SolverError(
            f"held_karp limited to {HELD_KARP_LIMIT} markets, got {len(nodes)}"
        )
    if len(set(nodes)) != len(nodes) or 0 in nodes:
        raise ValueError("nodes must be distinct markets")
    idx = [0] + nodes
    sub = dist[np.ix_(idx, idx)].astype(np.int64)
    dp, parent = _subset_paths(sub)
    s = len(nodes)
    full = (1 << s) - 1
    totals = dp[full, :] + sub[1:, 0]
    last = int(np.argmin(totals))
    cost = int(totals[last])
    order = _backtrack(parent, full, last)
    route = (0, *[nodes[j] for j in order], 0)
    return cost, route


def _subset_matrix(n_masks: int, m: int) -> np.ndarray:
    """(n_masks, m) booleans: bit b of each mask."""
    masks = np.arange(n_masks, dtype=np.int64)
    return ((masks[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)


def brute_force_solve(inst: TppInstance, size_limit: int = BRUTE_FORCE_LIMIT) -> Solution:
    """Global optimum by enumerating every feasible market subset.

    Objective ties break toward the lexicographically smallest sorted
    market set, so the result is deterministic. The guard is explicit:
    callers that can afford a bigger enumeration pass a larger
    ``size_limit`` deliberately.
    """
    M, K = inst.num_markets, inst.num_products
    if M > size_limit:
        raise SolverError(
            f"brute force guarded to {size_limit} markets, instance has {M}"
        )
    dist = distance_matrix(inst)
    dp, parent = _subset_paths(dist)
    n_masks = 1 << M
    back = dist[1:, 0]
    tour = np.where(dp < INF, dp + back[None, :], INF)
    tour_cost = tour.min(axis=1)
    tour_last = tour.argmin(axis=1)

    visited = _subset_matrix(n_masks, M)
    supply = np.zeros((M, K), dtype=np.int64)
    prices_by_product: list[np.ndarray] = []
    qty_by_product: list[np.ndarray] = []
    col_by_product: list[np.ndarray] = []
    per_product: list[list[tuple[int, int, int]]] = [[] for _ in range(K)]
    for (i, k), off in inst.offers.items():
        supply[i - 1, k] = off.quantity
        per_product[k].append((off.price, i, off.quantity))
    for k in range(K):
        rows = sorted(per_product[k])
        prices_by_product.append(np.array([r[0] for r in rows], dtype=np.int64))
        qty_by_product.append(np.array([r[2] for r in rows], dtype=np.int64))
        col_by_product.append(np.array([r[1] - 1 for r in rows], dtype=np.int64))

    demands = np.array(inst.demands, dtype=np.int64)
    coverage = visited.astype(np.int64) @ supply
    feasible = (coverage >= demands[None, :]).all(axis=1)
    feasible[0] = False
    if not feasible.any():
        raise SolverError("no feasible market subset (invalid instance?)")
    fmask_ids = np.flatnonzero(feasible)
    fvisited = visited[fmask_ids]

    purchase = np.zeros(fmask_ids.shape[0], dtype=np.int64)
    for k in range(K):
        sel = fvisited[:, col_by_product[k]]
        avail = sel * qty_by_product[k][None, :]
        used = np.cumsum(avail, axis=1)
        bought = np.clip(demands[k] - used + avail, 0, avail)
        purchase += bought @ prices_by_product[k]

    objective = tour_cost[fmask_ids] + purchase
    best = int(objective.min())
    tie_ids = fmask_ids[np.flatnonzero(objective == best)]
    best_mask = min(
        (tuple(sorted(np.flatnonzero(visited[m]) + 1)), int(m)) for m in tie_ids
    )[1]

    last = int(tour_last[best_mask])
    order = _backtrack(parent, best_mask, last)
    route = (0, *[j + 1 for j in order], 0)
    plan, pcost = optimal_purchase(inst, route[1:-1])
    travel = route_travel_cost(route, dist)
    sol = Solution(route=route, plan=plan, travel_cost=travel, purchase_cost=pcost)
    if sol.objective != best:
        raise SolverError(
            f"internal disagreement: DP {best} vs rebuilt {sol.objective}"
        )
    return sol


def instance_digest(inst: TppInstance) -> str:
    """Stable short hash of the canonical serialization."""
    return hashlib.sha256(dumps_instance(inst).encode("ascii")).hexdigest()[:16]


def export_milp(inst: TppInstance) -> str:
    """Arc-based mixed-integer program in LP text format.

    Binary arc variables x_i_j and visit variables y_i, continuous
    purchase variables z_i_k bounded by offered quantities, and
    continuous sequencing variables u_i (1..M) whose pairwise
    constraints forbid subtours that avoid the depot.
    """
    M = inst.num_markets
    dist = distance_matrix(inst)
    lines: list[str] = []
    lines.append(f"\\ traveling purchaser instance {instance_digest(inst)}")
    lines.append(
        f"\\ markets={M} products={inst.num_products} "
        f"variant={inst.variant.value.upper()}"
    )
    terms: list[str] = []
    for i in range(M + 1):
        for j in range(M + 1):
            if i != j:
                terms.append(f"+ {int(dist[i, j])} x_{i}_{j}")
    for (i, k) in sorted(inst.offers):
        terms.append(f"+ {inst.offers[(i, k)].price} z_{i}_{k}")
    lines.append("Minimize")
    lines.append(" obj: " + " ".join(terms))

    lines.append("Subject To")
    for k in range(inst.num_products):
        markets = inst.markets_offering(k)
        expr = " ".join(f"+ z_{i}_{k}" for i in markets)
        lines.append(f" demand_{k}: {expr} = {inst.demands[k]}")
    for (i, k) in sorted(inst.offers):
        q = inst.offers[(i, k)].quantity
        lines.append(f" link_{i}_{k}: + z_{i}_{k} - {q} y_{i} <= 0")
    for h in range(M + 1):
        out = " ".join(f"+ x_{h}_{j}" for j in range(M + 1) if j != h)
        lines.append(f" outdeg_{h}: {out} - y_{h} = 0")
        into = " ".join(f"+ x_{i}_{h}" for i in range(M + 1) if i != h)
        lines.append(f" indeg_{h}: {into} - y_{h} = 0")
    for i in range(1, M + 1):
        for j in range(1, M + 1):
            if i != j:
                lines.append(
                    f" seq_{i}_{j}: + u_{i} - u_{j} + {M} x_{i}_{j} <= {M - 1}"
                )

    lines.append("Bounds")
    lines.append(" y_0 = 1")
    for (i, k) in sorted(inst.offers):
        lines.append(f" 0 <= z_{i}_{k} <= {inst.offers[(i, k)].quantity}")
    for i in range(1, M + 1):
        lines.append(f" 1 <= u_{i} <= {M}")

    lines.append("Binaries")
    names = [f"x_{i}_{j}" for i in range(M + 1) for j in range(M + 1) if i != j]
    names += [f"y_{i}" for i in range(M + 1)]
    for start in range(0, len(names), 12):
        lines.append(" " + " ".join(names[start:start + 12]))
    lines.append("End")
    return "\n".join(lines) + "\n"
