"""Route construction as a Markov decision process.

States are immutable snapshots of (partial route, remaining demand).
Actions are node indices: picking a market appends it to the route and
absorbs whatever it offers into the remaining demands; picking the
depot closes the tour. Rewards are all zero until the terminal step,
whose reward is the negated objective of the completed solution.

The masking rules are the contract every rollout relies on: a visited
market never reappears, and the depot stays masked until every demand
hits zero, so any mask-respecting action sequence ends in a feasible
solution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import IllegalActionError
from .model import Solution, TppInstance, distance_matrix, route_travel_cost
from .model import require_valid
from .planner import optimal_purchase


@dataclass(frozen=True)
class EnvState:
    instance: TppInstance
    route: tuple[int, ...]
    remaining: tuple[int, ...]
    t: int
    terminal: bool

    @property
    def current(self) -> int:
        return self.route[-1]

    @property
    def visited(self) -> tuple[int, ...]:
        return self.route[1:]

    @property
    def demands_met(self) -> bool:
        return all(r == 0 for r in self.remaining)


def reset(inst: TppInstance, validate: bool = True) -> EnvState:
    if validate:
        require_valid(inst)
    return EnvState(
        instance=inst,
        route=(0,),
        remaining=tuple(inst.demands),
        t=1,
        terminal=False,
    )


def action_mask(state: EnvState) -> np.ndarray:
    """Boolean vector over nodes 0..M; True means selectable."""
    if state.terminal:
        raise ValueError("terminal state has no actions")
    inst = state.instance
    mask = np.ones(inst.num_nodes, dtype=bool)
    mask[list(state.route)] = False
    mask[0] = state.demands_met
    return mask


def step(state: EnvState, action: int) -> EnvState:
    if state.terminal:
        raise ValueError("cannot step a terminal state")
    mask = action_mask(state)
    if not (0 <= action < mask.shape[0]) or not mask[action]:
        raise IllegalActionError(f"action {action} is masked in step {state.t}")
    if action == 0:
        return replace(state, t=state.t + 1, terminal=True)
    inst = state.instance
    remaining = list(state.remaining)
    for k in range(inst.num_products):
        off = inst.offers.get((action, k))
        if off is not None and remaining[k] > 0:
            remaining[k] = max(0, remaining[k] - off.quantity)
    return EnvState(
        instance=inst,
        route=state.route + (action,),
        remaining=tuple(remaining),
        t=state.t + 1,
        terminal=False,
    )


def terminal_reward(state: EnvState) -> tuple[int, Solution]:
    """Negated objective of the finished tour, plus the solution itself."""
    if not state.terminal:
        raise ValueError("reward is only defined at the terminal state")
    inst = state.instance
    route = state.route + (0,)
    plan, purchase = optimal_purchase(inst, state.visited)
    travel = route_travel_cost(route, distance_matrix(inst))
    sol = Solution(route=route, plan=plan, travel_cost=travel, purchase_cost=purchase)
    return -sol.objective, sol


def random_rollout(inst: TppInstance, rng: np.random.Generator,
                   validate: bool = False) -> Solution:
    """Uniform mask-respecting policy; exists to fuzz the mask rules."""
    state = reset(inst, validate=validate)
    while not state.terminal:
        mask = action_mask(state)
        choices = np.flatnonzero(mask)
        state = step(state, int(rng.choice(choices)))
    return terminal_reward(state)[1]
