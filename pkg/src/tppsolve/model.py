"""Problem model: instances, routes, purchase plans, solutions.

A traveling purchaser instance lives on node indices 0..M where node 0
is the depot and nodes 1..M are markets. Products are indexed 0..K-1.
Travel costs are Euclidean distances truncated to integers, so every
cost in the toolkit is an exact 64-bit integer and solution objectives
compare with ``==``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import ValidationError

COORD_MAX = 1000  # coordinates live on the integer square [0, 1000]^2


class Variant(enum.Enum):
    """Purchase rule: unrestricted markets stock full demand, restricted
    markets stock a bounded quantity per product."""

    UNRESTRICTED = "u"
    RESTRICTED = "r"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        t = text.strip().lower()
        if t in ("u", "unrestricted"):
            return cls.UNRESTRICTED
        if t in ("r", "restricted"):
            return cls.RESTRICTED
        raise ValueError(f"unknown variant {text!r}")


@dataclass(frozen=True)
class Offer:
    """One market's terms for one product."""

    price: int
    quantity: int


# A route is a tuple of node indices beginning and ending at the depot.
Route = tuple[int, ...]

# A purchase plan maps (market, product) to a positive unit count.
PurchasePlan = dict[tuple[int, int], int]


@dataclass(frozen=True)
class TppInstance:
    """Immutable problem instance.

    ``offers`` is keyed by (market index, product index); markets are
    1-based node indices because the depot sells nothing.
    """

    depot: tuple[int, int]
    markets: tuple[tuple[int, int], ...]
    demands: tuple[int, ...]
    offers: Mapping[tuple[int, int], Offer]
    variant: Variant
    lam: float | None = None

    @property
    def num_markets(self) -> int:
        return len(self.markets)

    @property
    def num_products(self) -> int:
        return len(self.demands)

    @property
    def num_nodes(self) -> int:
        return len(self.markets) + 1

    def coord(self, node: int) -> tuple[int, int]:
        return self.depot if node == 0 else self.markets[node - 1]

    def markets_offering(self, product: int) -> list[int]:
        return sorted(i for (i, k) in self.offers if k == product)

    def offers_for(self, product: int) -> list[tuple[int, Offer]]:
        """Offers for one product sorted by market index."""
        return sorted(
            ((i, off) for (i, k), off in self.offers.items() if k == product),
            key=lambda pair: pair[0],
        )

    def supply(self, product: int) -> int:
        return sum(
            off.quantity for (i, k), off in self.offers.items() if k == product
        )

    def max_price(self) -> int:
        return max(off.price for off in self.offers.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TppInstance):
            return NotImplemented
        return (
            self.depot == other.depot
            and self.markets == other.markets
            and self.demands == other.demands
            and dict(self.offers) == dict(other.offers)
            and self.variant == other.variant
            and self.lam == other.lam
        )


def truncated_distance(a: tuple[int, int], b: tuple[int, int]) -> int:
    """Euclidean distance truncated toward zero."""
    return int(math.isqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2))


def distance_matrix(inst: TppInstance) -> np.ndarray:
    """Full (M+1, M+1) int64 matrix of truncated distances."""
    coords = np.array([inst.depot, *inst.markets], dtype=np.int64)
    dx = coords[:, 0][:, None] - coords[:, 0][None, :]
    dy = coords[:, 1][:, None] - coords[:, 1][None, :]
    return np.floor(np.sqrt(dx * dx + dy * dy)).astype(np.int64)


def is_valid_route(route: Route, num_markets: int) -> bool:
    """Depot-rooted cycle visiting each market at most once."""
    if len(route) < 3 or route[0] != 0 or route[-1] != 0:
        return False
    inner = route[1:-1]
    if not inner:
        return False
    if any(not (1 <= v <= num_markets) for v in inner):
        return False
    return len(set(inner)) == len(inner)


def route_travel_cost(route: Route, dist: np.ndarray) -> int:
    """Sum of arc costs along the route."""
    total = 0
    for a, b in zip(route, route[1:]):
        total += int(dist[a, b])
    return total


@dataclass(frozen=True)
class Solution:
    """A route plus a purchase plan with their exact integer costs."""

    route: Route
    plan: PurchasePlan
    travel_cost: int
    purchase_cost: int
    objective: int = field(default=-1)

    def __post_init__(self):
        if self.objective == -1:
            object.__setattr__(
                self, "objective", self.travel_cost + self.purchase_cost
            )
        if self.objective != self.travel_cost + self.purchase_cost:
            raise ValueError(
                "objective must equal travel_cost + purchase_cost"
            )

    @property
    def visited(self) -> tuple[int, ...]:
        return self.route[1:-1]


def check_solution(sol: Solution, inst: TppInstance) -> list[str]:
    """Full audit of a solution against its instance.

    Returns human-readable violations; empty means the solution is
    consistent (valid route, demand met, quantities within offers, all
    purchases at visited markets, costs recomputed exactly).
    """
    problems: list[str] = []
    if not is_valid_route(sol.route, inst.num_markets):
        problems.append(f"invalid route {sol.route}")
        return problems
    dist = distance_matrix(inst)
    travel = route_travel_cost(sol.route, dist)
    if travel != sol.travel_cost:
        problems.append(f"travel cost {sol.travel_cost} != recomputed {travel}")
    visited = set(sol.visited)
    bought = [0] * inst.num_products
    cost = 0
    for (i, k), units in sol.plan.items():
        if units <= 0:
            problems.append(f"non-positive purchase {units} at ({i},{k})")
            continue
        if i not in visited:
            problems.append(f"purchase at unvisited market {i}")
        off = inst.offers.get((i, k))
        if off is None:
            problems.append(f"purchase of unoffered product {k} at market {i}")
            continue
        if units > off.quantity:
            problems.append(
                f"purchase {units} exceeds stock {off.quantity} at ({i},{k})"
            )
        bought[k] += units
        cost += units * off.price
    for k, d in enumerate(inst.demands):
        if bought[k] != d:
            problems.append(f"product {k}: bought {bought[k]} of demand {d}")
    if cost != sol.purchase_cost:
        problems.append(f"purchase cost {sol.purchase_cost} != recomputed {cost}")
    if sol.objective != sol.travel_cost + sol.purchase_cost:
        problems.append("objective mismatch")
    return problems


def validate_instance(inst: TppInstance) -> list[str]:
    """Structural checks; returns all violations, empty when valid."""
    v: list[str] = []
    M, K = inst.num_markets, inst.num_products
    if M < 1:
        v.append("instance has no markets")
    if K < 1:
        v.append("instance has no products")
    for name, (x, y) in [("depot", inst.depot)] + [
        (f"market {i + 1}", c) for i, c in enumerate(inst.markets)
    ]:
        if not (
            isinstance(x, int)
            and isinstance(y, int)
            and 0 <= x <= COORD_MAX
            and 0 <= y <= COORD_MAX
        ):
            v.append(f"{name} coordinate {(x, y)} outside integer [0,{COORD_MAX}]^2")
    for k, d in enumerate(inst.demands):
        if not (isinstance(d, int) and d >= 1):
            v.append(f"product {k} demand {d} is not a positive integer")
    supply = [0] * K
    for (i, k), off in inst.offers.items():
        if not (1 <= i <= M):
            v.append(f"offer at out-of-range market {i}")
            continue
        if not (0 <= k < K):
            v.append(f"offer for out-of-range product {k}")
            continue
        if not (isinstance(off.price, int) and off.price >= 1):
            v.append(f"offer ({i},{k}) price {off.price} is not a positive integer")
        if not (isinstance(off.quantity, int) and off.quantity >= 1):
            v.append(f"offer ({i},{k}) quantity {off.quantity} is not positive")
        elif off.quantity > inst.demands[k]:
            v.append(
                f"offer ({i},{k}) quantity {off.quantity} exceeds demand "
                f"{inst.demands[k]}"
            )
        elif inst.variant is Variant.UNRESTRICTED and off.quantity != inst.demands[k]:
            v.append(
                f"unrestricted offer ({i},{k}) must stock the full demand "
                f"{inst.demands[k]}, got {off.quantity}"
            )
        supply[k] += off.quantity
    for k in range(K):
        if supply[k] < inst.demands[k]:
            v.append(
                f"product {k} total supply {supply[k]} below demand "
                f"{inst.demands[k]}"
            )
    if inst.variant is Variant.RESTRICTED:
        if inst.lam is not None and not (0.0 < inst.lam < 1.0):
            v.append(f"lambda {inst.lam} outside (0,1)")
    elif inst.lam is not None:
        v.append("lambda set on an unrestricted instance")
    return v


def require_valid(inst: TppInstance) -> TppInstance:
    """Raise ValidationError unless the instance is valid."""
    violations = validate_instance(inst)
    if violations:
        raise ValidationError(violations)
    return inst


def iter_route_arcs(route: Route) -> Iterator[tuple[int, int]]:
    return zip(route, route[1:])
