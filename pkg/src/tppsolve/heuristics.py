"""Construction and improvement heuristics.

Two constructive procedures build feasible tours from scratch: a
savings-driven one (``gsh``) that grows the route by whichever market
cuts the combined purchase-plus-travel bill the most, and a
commodity-driven one (``cah``) that settles products one at a time,
most expensive first. Both are followed in the named pipelines by a
market-removal pass (``trh``) and a tour re-sequencing pass
(``tsp_resequence``), neither of which ever makes an individual
solution worse.

All tie-breaks are pinned (best score, then lowest market index, then
lowest edge position) so every run of a heuristic on an instance gives
byte-identical output.
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleRouteError
from .model import Solution, TppInstance, distance_matrix, route_travel_cost
from .oracle import HELD_KARP_LIMIT, held_karp
from .planner import PurchaseEvaluator, optimal_purchase


def _best_insertion(dist: np.ndarray, route: list[int], m: int) -> tuple[int, int]:
    """Cheapest edge position for inserting market m; ties to the
    earliest position."""
    a = np.array(route[:-1])
    b = np.array(route[1:])
    deltas = dist[a, m] + dist[m, b] - dist[a, b]
    pos = int(np.argmin(deltas))
    return int(deltas[pos]), pos


def _finalize(inst: TppInstance, route: list[int], dist: np.ndarray) -> Solution:
    plan, purchase = optimal_purchase(inst, tuple(route[1:-1]))
    travel = route_travel_cost(tuple(route), dist)
    return Solution(
        route=tuple(route), plan=plan, travel_cost=travel, purchase_cost=purchase
    )


def gsh(inst: TppInstance) -> Solution:
    """Savings construction.

    Seeds the tour with the market minimizing out-and-back travel plus
    the cost of its best partial coverage (uncovered units priced at
    the instance-wide maximum), then repeatedly inserts the
    (market, position) pair with the largest savings

        (drop in purchase cost of the visited set) - (travel increase),

    forced while the set is still infeasible, and only while savings
    stay positive once it is feasible.
    """
    M = inst.num_markets
    dist = distance_matrix(inst)
    ev = PurchaseEvaluator(inst)

    best_seed: tuple[int, int] | None = None
    for m in range(1, M + 1):
        mask = np.zeros(M + 1, dtype=bool)
        mask[m] = True
        score = 2 * int(dist[0, m]) + ev.surrogate_cost(mask)
        if best_seed is None or (score, m) < best_seed:
            best_seed = (score, m)
    seed = best_seed[1]

    route = [0, seed, 0]
    mask = np.zeros(M + 1, dtype=bool)
    mask[seed] = True
    current = ev.surrogate_cost(mask)

    while True:
        feasible = ev.feasible(mask)
        best: tuple[int, int, int, int] | None = None  # (-savings, m, pos, new_cost)
        for m in range(1, M + 1):
            if mask[m]:
                continue
            mask[m] = True
            with_m = ev.surrogate_cost(mask)
            mask[m] = False
            travel_delta, pos = _best_insertion(dist, route, m)
            savings = (current - with_m) - travel_delta
            key = (-savings, m, pos, with_m)
            if best is None or key < best:
                best = key
        if best is None:
            break
        savings = -best[0]
        if feasible and savings <= 0:
            break
        _, m, pos, new_cost = best
        route.insert(pos + 1, m)
        mask[m] = True
        current = new_cost
    return _finalize(inst, route, dist)


def cah(inst: TppInstance) -> Solution:
    """Commodity-adding construction.

    Processes products by descending demand-weighted minimum price;
    while a product's demand is not yet purchasable from the visited
    set, inserts the market minimizing

        (travel increase at its best position)
        + (its price) * (units it can contribute),

    then re-evaluates coverage.
    """
    M, K = inst.num_markets, inst.num_products
    dist = distance_matrix(inst)
    ev = PurchaseEvaluator(inst)

    weight: list[tuple[int, int]] = []
    for k in range(K):
        cheapest = min(
            off.price for (i, kk), off in inst.offers.items() if kk == k
        )
        weight.append((-inst.demands[k] * cheapest, k))
    order = [k for _, k in sorted(weight)]

    route = [0, 0]
    mask = np.zeros(M + 1, dtype=bool)
    for k in order:
        while True:
            remaining = int(ev.uncovered_by_product(mask)[k])
            if remaining == 0:
                break
            best: tuple[int, int, int] | None = None  # (score, m, pos)
            for i, off in inst.offers_for(k):
                if mask[i]:
                    continue
                travel_delta, pos = _best_insertion(dist, route, i)
                score = travel_delta + off.price * min(off.quantity, remaining)
                key = (score, i, pos)
                if best is None or key < best:
                    best = key
            if best is None:
                raise InfeasibleRouteError(k, remaining)
            _, m, pos = best
            route.insert(pos + 1, m)
            mask[m] = True
    if len(route) == 2:
        raise InfeasibleRouteError(0, inst.demands[0])
    return _finalize(inst, route, dist)


def trh(inst: TppInstance, sol: Solution) -> Solution:
    """Market removal: drop the visited market with the best positive
    net saving (travel saved minus purchase cost increase) while one
    exists and feasibility survives. Never worsens the solution."""
    dist = distance_matrix(inst)
    ev = PurchaseEvaluator(inst)
    route = list(sol.route)
    mask = PurchaseEvaluator.mask_of(inst, route[1:-1])
    current_purchase = ev.cost(mask)

    while len(route) > 3:
        best: tuple[int, int, int] | None = None  # (-net, m, new_purchase)
        for p in range(1, len(route) - 1):
            m = route[p]
            mask[m] = False
            if ev.feasible(mask):
                new_purchase = ev.cost(mask)
                travel_saving = (
                    int(dist[route[p - 1], m])
                    + int(dist[m, route[p + 1]])
                    - int(dist[route[p - 1], route[p + 1]])
                )
                net = travel_saving - (new_purchase - current_purchase)
                key = (-net, m, new_purchase)
                if best is None or key < best:
                    best = key
            mask[m] = True
        if best is None or -best[0] <= 0:
            break
        _, m, new_purchase = best
        route.remove(m)
        mask[m] = False
        current_purchase = new_purchase
    out = _finalize(inst, route, dist)
    if out.objective > sol.objective:  # removal pass must never lose ground
        return sol
    return out


def _nearest_neighbor(dist: np.ndarray, nodes: list[int]) -> list[int]:
    todo = sorted(nodes)
    order = []
    cur = 0
    while todo:
        best = min((int(dist[cur, m]), m) for m in todo)[1]
        order.append(best)
        todo.remove(best)
        cur = best
    return order


def _two_opt(dist: np.ndarray, route: list[int]) -> list[int]:
    """First-improvement sweeps until no reversal helps."""
    r = list(route)
    improved = True
    while improved:
        improved = False
        n = len(r)
        for a in range(n - 3):
            for c in range(a + 2, n - 1):
                delta = (
                    int(dist[r[a], r[c]])
                    + int(dist[r[a + 1], r[c + 1]])
                    - int(dist[r[a], r[a + 1]])
                    - int(dist[r[c], r[c + 1]])
                )
                if delta < 0:
                    r[a + 1:c + 1] = reversed(r[a + 1:c + 1])
                    improved = True
        # sweep again from the top after any change
    return r


def tsp_resequence(inst: TppInstance, sol: Solution) -> Solution:
    """Reorder the visited markets; the set and plan stay fixed.

    Exact tour DP up to its size guard, nearest-neighbor plus 2-opt
    beyond it. The incumbent order is kept whenever the reordering
    fails to strictly improve travel, so the objective never rises.
    """
    visited = list(sol.visited)
    if len(visited) <= 1:
        return sol
    dist = distance_matrix(inst)
    if len(visited) <= HELD_KARP_LIMIT:
        travel, route = held_karp(dist, visited)
    else:
        route_l = [0] + _nearest_neighbor(dist, visited) + [0]
        route_l = _two_opt(dist, route_l)
        route = tuple(route_l)
        travel = route_travel_cost(route, dist)
    if travel >= sol.travel_cost:
        return sol
    return Solution(
        route=route,
        plan=dict(sol.plan),
        travel_cost=travel,
        purchase_cost=sol.purchase_cost,
    )


def post_optimize(inst: TppInstance, sol: Solution) -> Solution:
    """Removal pass then re-sequencing; composition is monotone."""
    return tsp_resequence(inst, trh(inst, sol))


def gsh_trh(inst: TppInstance) -> Solution:
    return post_optimize(inst, gsh(inst))


def cah_trh(inst: TppInstance) -> Solution:
    return post_optimize(inst, cah(inst))


HEURISTICS = {
    "gsh": gsh,
    "cah": cah,
    "gsh+trh": gsh_trh,
    "cah+trh": cah_trh,
}
