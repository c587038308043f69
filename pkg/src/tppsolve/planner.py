"""Optimal purchasing for a fixed set of visited markets.

Once the visited set is fixed, the purchase subproblem decomposes per
product: buy units cheapest-first until demand is met. That greedy fill
is the exact optimum of the per-product transportation relaxation, so
no LP solver is needed on the hot path.

Two implementations live here on purpose. ``optimal_purchase`` is the
readable per-product reference that also builds the plan dictionary;
``PurchaseEvaluator`` answers cost-only queries over many candidate
visited sets from padded arrays, which is what the construction
heuristics hammer. They must agree exactly and a test holds them to it.
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleRouteError
from .model import PurchasePlan, TppInstance


def optimal_purchase(
    inst: TppInstance, visited: tuple[int, ...] | frozenset[int] | set[int]
) -> tuple[PurchasePlan, int]:
    """Cheapest plan covering all demands from the visited markets.

    Ties between equal prices break toward the lower market index, so
    plans are deterministic. Raises InfeasibleRouteError naming the
    first product whose demand cannot be covered.
    """
    vset = set(visited)
    if not vset:
        raise InfeasibleRouteError(0, inst.demands[0] if inst.demands else 0)
    plan: PurchasePlan = {}
    total = 0
    for k, demand in enumerate(inst.demands):
        remaining = demand
        candidates = sorted(
            (
                (off.price, i, off.quantity)
                for (i, kk), off in inst.offers.items()
                if kk == k and i in vset
            )
        )
        for price, i, qty in candidates:
            if remaining == 0:
                break
            take = min(qty, remaining)
            plan[(i, k)] = take
            total += take * price
            remaining -= take
        if remaining > 0:
            raise InfeasibleRouteError(k, remaining)
    return plan, total


def plan_cost(plan: PurchasePlan, inst: TppInstance) -> int:
    """Exact cost of a plan at the instance's prices."""
    return sum(units * inst.offers[key].price for key, units in plan.items())


class PurchaseEvaluator:
    """Vectorized cost queries over visited-set masks.

    Offers are pre-sorted per product by (price, market) and padded into
    rectangular arrays; a query is a handful of numpy ops over them.
    Padding rows point at node 0 (the depot), which no mask may select.
    """

    def __init__(self, inst: TppInstance):
        self.inst = inst
        K = inst.num_products
        per_product: list[list[tuple[int, int, int]]] = [[] for _ in range(K)]
        for (i, k), off in inst.offers.items():
            per_product[k].append((off.price, i, off.quantity))
        for rows in per_product:
            rows.sort()
        width = max((len(rows) for rows in per_product), default=1) or 1
        self.prices = np.zeros((K, width), dtype=np.int64)
        self.quantities = np.zeros((K, width), dtype=np.int64)
        self.market_ids = np.zeros((K, width), dtype=np.int64)
        for k, rows in enumerate(per_product):
            for j, (p, i, q) in enumerate(rows):
                self.prices[k, j] = p
                self.quantities[k, j] = q
                self.market_ids[k, j] = i
        self.demands = np.array(inst.demands, dtype=np.int64)
        self.max_price = int(self.prices.max()) if inst.offers else 0

    def _fill(self, visited_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sel = visited_mask[self.market_ids]
        avail = self.quantities * sel
        used = np.cumsum(avail, axis=1)
        bought = np.clip(self.demands[:, None] - used + avail, 0, avail)
        return bought, avail

    def cost_and_uncovered(self, visited_mask: np.ndarray) -> tuple[int, int]:
        """(cost of greedily covered units, total uncovered units)."""
        bought, avail = self._fill(visited_mask)
        cost = int((bought * self.prices).sum())
        uncovered = int(np.maximum(self.demands - avail.sum(axis=1), 0).sum())
        return cost, uncovered

    def cost(self, visited_mask: np.ndarray) -> int:
        """Exact optimal purchase cost; the set must be feasible."""
        cost, uncovered = self.cost_and_uncovered(visited_mask)
        if uncovered:
            short = np.maximum(
                self.demands - (self.quantities * visited_mask[self.market_ids]).sum(axis=1),
                0,
            )
            k = int(np.argmax(short > 0))
            raise InfeasibleRouteError(k, int(short[k]))
        return cost

    def surrogate_cost(self, visited_mask: np.ndarray) -> int:
        """Covered cost plus uncovered units priced at the instance max.

        Lets construction heuristics compare infeasible partial sets on
        one scale before coverage is complete.
        """
        cost, uncovered = self.cost_and_uncovered(visited_mask)
        return cost + uncovered * self.max_price

    def uncovered_by_product(self, visited_mask: np.ndarray) -> np.ndarray:
        sel = visited_mask[self.market_ids]
        supplied = (self.quantities * sel).sum(axis=1)
        return np.maximum(self.demands - supplied, 0)

    def feasible(self, visited_mask: np.ndarray) -> bool:
        return not self.uncovered_by_product(visited_mask).any()

    @staticmethod
    def mask_of(inst: TppInstance, visited) -> np.ndarray:
        mask = np.zeros(inst.num_nodes, dtype=bool)
        for i in visited:
            mask[i] = True
        mask[0] = False
        return mask
