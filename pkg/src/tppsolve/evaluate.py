"""Inference-time augmentation, strategy registry, and the evaluation
harness that produces the objective/time/gap tables.

Instance augmentation applies the eight symmetries of the coordinate
square. They are isometries, so the distance matrix and every optimum
are untouched; a learned policy, however, is not symmetric in the raw
coordinates, so running it on all eight views and keeping the best tour
is a free portfolio. Market indices are untouched by the transforms,
so tours transfer back verbatim.

Reports come in two renderings from one row set: a comma-separated
machine file and an aligned text table. Both are byte-reproducible for
a fixed strategy, instance set, and checkpoint, except for the timing
column.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import autodiff as ad
from .autodiff import ParamStore
from .errors import ParseError, TppError
from .heuristics import cah, cah_trh, gsh, gsh_trh, post_optimize
from .model import COORD_MAX, Solution, TppInstance
from .oracle import brute_force_solve
from .policy import PolicyConfig, rollout_batch

# the eight isometries of the [0, C]^2 square as (x, y) -> (x', y')
_C = COORD_MAX
_TRANSFORMS: tuple[Callable[[int, int], tuple[int, int]], ...] = (
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (_C - x, y),
    lambda x, y: (x, _C - y),
    lambda x, y: (_C - x, _C - y),
    lambda x, y: (y, _C - x),
    lambda x, y: (_C - y, x),
    lambda x, y: (_C - y, _C - x),
)

NUM_AUGMENTATIONS = len(_TRANSFORMS)

# every transform is its own inverse except the two quarter-turns
_INVERSE = {0: 0, 1: 1, 2: 2, 3: 3, 4: 4, 5: 6, 6: 5, 7: 7}


def augment_instance(inst: TppInstance, index: int) -> TppInstance:
    """Apply one coordinate symmetry; offers and demands are shared."""
    if not 0 <= index < NUM_AUGMENTATIONS:
        raise ValueError(f"augmentation index {index} outside 0..{NUM_AUGMENTATIONS - 1}")
    if index == 0:
        return inst
    f = _TRANSFORMS[index]
    return TppInstance(
        depot=f(*inst.depot),
        markets=tuple(f(*m) for m in inst.markets),
        demands=inst.demands,
        offers=inst.offers,
        variant=inst.variant,
        lam=inst.lam,
    )


def augmentation_inverse(index: int) -> int:
    if index not in _INVERSE:
        raise ValueError(f"augmentation index {index} outside 0..{NUM_AUGMENTATIONS - 1}")
    return _INVERSE[index]


def solve_with_augmentation(
    inst: TppInstance, params: ParamStore, config: PolicyConfig,
) -> Solution:
    """Greedy-decode all eight augmented views, keep the best tour.

    Ties resolve to the lowest augmentation index, so the result is
    deterministic for fixed parameters.
    """
    views = [augment_instance(inst, i) for i in range(NUM_AUGMENTATIONS)]
    with ad.no_grad():
        out = rollout_batch(views, params, config, mode="greedy")
    best = min(range(NUM_AUGMENTATIONS), key=lambda i: (out.objectives[i], i))
    route = out.solutions[best].route
    # isometries keep market indices and all costs; rebuild on the
    # original instance only to re-anchor the Solution object
    sol = out.solutions[best]
    return Solution(route=route, plan=sol.plan, travel_cost=sol.travel_cost,
                    purchase_cost=sol.purchase_cost)


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

STRATEGIES = ("gsh", "cah", "gsh+trh", "cah+trh", "rl-e2e", "rl+trh", "oracle")
MODEL_STRATEGIES = ("rl-e2e", "rl+trh")


def make_strategy(
    name: str,
    params: ParamStore | None = None,
    policy: PolicyConfig | None = None,
) -> Callable[[TppInstance], Solution]:
    """Resolve a strategy name to a single-instance solver callable.

    The two learned strategies need a parameter store; "rl-e2e" is the
    augmented greedy policy and "rl+trh" adds route-reduction and tour
    re-sequencing on top of it.
    """
    if name in MODEL_STRATEGIES:
        if params is None:
            raise ValueError(f"strategy {name!r} needs model parameters")
        cfg = policy if policy is not None else PolicyConfig()
        if name == "rl-e2e":
            return lambda inst: solve_with_augmentation(inst, params, cfg)
        return lambda inst: post_optimize(inst, solve_with_augmentation(inst, params, cfg))
    table: dict[str, Callable[[TppInstance], Solution]] = {
        "gsh": gsh,
        "cah": cah,
        "gsh+trh": gsh_trh,
        "cah+trh": cah_trh,
        "oracle": brute_force_solve,
    }
    if name not in table:
        raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    return table[name]


def symmetrized(solver: Callable[[TppInstance], Solution]) -> Callable[[TppInstance], Solution]:
    """Run a solver on all eight views and keep the best solution.

    For the distance-invariant solvers this only breaks ties; it exists
    so the augmentation toggle applies uniformly to any strategy.
    """

    def run(inst: TppInstance) -> Solution:
        best: Solution | None = None
        for i in range(NUM_AUGMENTATIONS):
            sol = solver(augment_instance(inst, i))
            if best is None or sol.objective < best.objective:
                best = sol
        return best

    return run


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    name: str
    objective: int | None
    seconds: float
    gap: float | None  # fraction, not percent
    error: str | None


@dataclass(frozen=True)
class EvalReport:
    strategy: str
    rows: tuple[EvalRow, ...]

    @property
    def successes(self) -> tuple[EvalRow, ...]:
        return tuple(r for r in self.rows if r.error is None)

    @property
    def failures(self) -> tuple[EvalRow, ...]:
        return tuple(r for r in self.rows if r.error is not None)

    @property
    def mean_objective(self) -> float | None:
        ok = self.successes
        if not ok:
            return None
        return sum(r.objective for r in ok) / len(ok)

    @property
    def mean_seconds(self) -> float | None:
        ok = self.successes
        if not ok:
            return None
        return sum(r.seconds for r in ok) / len(ok)

    @property
    def mean_gap(self) -> float | None:
        gaps = [r.gap for r in self.successes if r.gap is not None]
        if not gaps:
            return None
        return sum(gaps) / len(gaps)


def evaluate(
    strategy: str | Callable[[TppInstance], Solution],
    instances: Sequence[tuple[str, TppInstance]],
    params: ParamStore | None = None,
    policy: PolicyConfig | None = None,
    optima: Mapping[str, int] | None = None,
) -> EvalReport:
    """Run one strategy over a named instance set.

    Timing covers the solve call only. A solver failure on an instance
    becomes a row-level error; aggregates run over the successes.
    """
    if callable(strategy):
        solver, label = strategy, getattr(strategy, "__name__", "custom")
    else:
        solver, label = make_strategy(strategy, params=params, policy=policy), strategy
    rows = []
    for name, inst in instances:
        start = time.perf_counter()
        try:
            sol = solver(inst)
            seconds = time.perf_counter() - start
            gap = None
            if optima is not None and name in optima and optima[name] > 0:
                gap = (sol.objective - optima[name]) / optima[name]
            rows.append(EvalRow(name, sol.objective, seconds, gap, None))
        except TppError as exc:
            seconds = time.perf_counter() - start
            rows.append(EvalRow(name, None, seconds, None, str(exc)))
    return EvalReport(strategy=label, rows=tuple(rows))


def parse_opt_file(path: str | Path) -> dict[str, int]:
    """Reference optima: one `name objective` pair per line, '#' comments."""
    out: dict[str, int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected `name objective`", line=lineno)
        try:
            out[parts[0]] = int(parts[1])
        except ValueError:
            raise ParseError(f"objective {parts[1]!r} is not an integer", line=lineno)
    return out


def report_csv(report: EvalReport) -> str:
    """Machine-readable rendering; one row per instance plus a summary."""
    buf = io.StringIO()
    buf.write("instance,objective,seconds,gap_pct,error\n")
    for r in report.rows:
        obj = "" if r.objective is None else str(r.objective)
        gap = "" if r.gap is None else f"{100 * r.gap:.2f}"
        err = "" if r.error is None else r.error.replace(",", ";").replace("\n", " ")
        buf.write(f"{r.name},{obj},{r.seconds:.6f},{gap},{err}\n")
    mean_obj = report.mean_objective
    mean_gap = report.mean_gap
    buf.write(
        "mean,{},{},{},\n".format(
            "" if mean_obj is None else f"{mean_obj:.3f}",
            "" if report.mean_seconds is None else f"{report.mean_seconds:.6f}",
            "" if mean_gap is None else f"{100 * mean_gap:.2f}",
        )
    )
    return buf.getvalue()


def report_text(report: EvalReport) -> str:
    """Aligned table for humans; gaps as percentages, two decimals."""
    name_w = max([len("instance")] + [len(r.name) for r in report.rows])
    lines = [f"strategy: {report.strategy}"]
    header = f"{'instance':<{name_w}}  {'objective':>10}  {'seconds':>9}  {'gap':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.rows:
        if r.error is not None:
            lines.append(f"{r.name:<{name_w}}  {'error':>10}  {r.seconds:>9.3f}  "
                         f"{'':>8}  {r.error}")
            continue
        gap = "" if r.gap is None else f"{100 * r.gap:.2f}%"
        lines.append(f"{r.name:<{name_w}}  {r.objective:>10}  {r.seconds:>9.3f}  {gap:>8}")
    lines.append("-" * len(header))
    mean_obj = "" if report.mean_objective is None else f"{report.mean_objective:.3f}"
    mean_gap = "" if report.mean_gap is None else f"{100 * report.mean_gap:.2f}%"
    secs = "" if report.mean_seconds is None else f"{report.mean_seconds:.3f}"
    lines.append(f"{'mean':<{name_w}}  {mean_obj:>10}  {secs:>9}  {mean_gap:>8}")
    if report.failures:
        lines.append(f"warning: {len(report.failures)} of {len(report.rows)} "
                     "instances failed; means cover successes only")
    return "\n".join(lines) + "\n"
