"""Augmentation symmetry proofs and evaluation-harness checks."""

import numpy as np
import pytest

import tppsolve.evaluate as ev
import tppsolve.policy as pol
from tppsolve.errors import ParseError
from tppsolve.generate import GeneratorSpec, generate, generate_many
from tppsolve.heuristics import gsh_trh
from tppsolve.model import Variant, check_solution, distance_matrix, validate_instance
from tppsolve.oracle import brute_force_solve

SMALL = pol.PolicyConfig(embedding_dim=16, num_encoder_layers=1, num_heads=2)
SPEC = GeneratorSpec(Variant.UNRESTRICTED, markets=5, products=4, seed=2)


@pytest.fixture
def inst():
    return generate(SPEC)


@pytest.fixture
def params():
    return pol.init_policy_params(SMALL, np.random.default_rng(1))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def test_identity_augmentation(inst):
    assert ev.augment_instance(inst, 0) == inst


def test_augment_preserves_distances(inst):
    base = distance_matrix(inst)
    for i in range(ev.NUM_AUGMENTATIONS):
        aug = ev.augment_instance(inst, i)
        assert np.array_equal(distance_matrix(aug), base), i
        assert validate_instance(aug) == []
        assert aug.demands == inst.demands
        assert aug.offers == inst.offers


def test_augmentations_are_distinct(inst):
    coords = {tuple((aug.depot, *aug.markets))
              for aug in (ev.augment_instance(inst, i) for i in range(8))}
    assert len(coords) == 8  # generic instance: all eight views differ


def test_augment_inverse_recovers_coordinates(inst):
    for i in range(ev.NUM_AUGMENTATIONS):
        j = ev.augmentation_inverse(i)
        back = ev.augment_instance(ev.augment_instance(inst, i), j)
        assert back.depot == inst.depot
        assert back.markets == inst.markets
    assert ev.augmentation_inverse(5) == 6
    assert ev.augmentation_inverse(6) == 5


def test_augment_index_range(inst):
    with pytest.raises(ValueError):
        ev.augment_instance(inst, 8)
    with pytest.raises(ValueError):
        ev.augment_instance(inst, -1)
    with pytest.raises(ValueError):
        ev.augmentation_inverse(9)


def test_optimum_invariant_under_augmentation():
    tiny = generate(GeneratorSpec(Variant.RESTRICTED, markets=4, products=3,
                                  lam=0.95, seed=7))
    ref = brute_force_solve(tiny).objective
    for i in range(ev.NUM_AUGMENTATIONS):
        assert brute_force_solve(ev.augment_instance(tiny, i)).objective == ref


# ---------------------------------------------------------------------------
# augmented decoding
# ---------------------------------------------------------------------------


def test_augmented_solve_never_worse_than_plain(params):
    for i in range(10):
        inst = generate_many(SPEC, 1, start=i)[0]
        plain, _ = pol.rollout(inst, params, SMALL)
        best = ev.solve_with_augmentation(inst, params, SMALL)
        assert best.objective <= plain.objective
        assert check_solution(best, inst) == []


def test_augmented_solve_deterministic(inst, params):
    a = ev.solve_with_augmentation(inst, params, SMALL)
    b = ev.solve_with_augmentation(inst, params, SMALL)
    assert a.route == b.route
    assert a.objective == b.objective


def test_post_optimized_strategy_never_worse(params):
    e2e = ev.make_strategy("rl-e2e", params=params, policy=SMALL)
    combo = ev.make_strategy("rl+trh", params=params, policy=SMALL)
    for i in range(5):
        inst = generate_many(SPEC, 1, start=10 + i)[0]
        assert combo(inst).objective <= e2e(inst).objective


def test_symmetrized_wrapper_never_worse(inst):
    plain = gsh_trh(inst).objective
    assert ev.symmetrized(gsh_trh)(inst).objective <= plain


# ---------------------------------------------------------------------------
# strategy registry
# ---------------------------------------------------------------------------


def test_registry_names(params):
    for name in ("gsh", "cah", "gsh+trh", "cah+trh", "oracle"):
        solver = ev.make_strategy(name)
        assert callable(solver)
    for name in ("rl-e2e", "rl+trh"):
        assert callable(ev.make_strategy(name, params=params, policy=SMALL))


def test_registry_rejects_unknown_and_missing_params():
    with pytest.raises(ValueError, match="unknown strategy"):
        ev.make_strategy("magic")
    with pytest.raises(ValueError, match="needs model parameters"):
        ev.make_strategy("rl-e2e")


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------


def _named_set(count=4, markets=4, start=0):
    spec = GeneratorSpec(Variant.UNRESTRICTED, markets=markets, products=3, seed=5)
    return [(f"inst_{i:03d}", g)
            for i, g in enumerate(generate_many(spec, count, start=start))]


def test_oracle_self_reference_gaps_are_zero():
    named = _named_set()
    optima = {name: brute_force_solve(inst).objective for name, inst in named}
    report = ev.evaluate("oracle", named, optima=optima)
    assert all(r.gap == 0.0 for r in report.rows)
    assert report.mean_gap == 0.0
    assert report.mean_objective == sum(optima.values()) / len(optima)


def test_two_strategies_share_instance_columns():
    named = _named_set()
    a = ev.evaluate("gsh", named)
    b = ev.evaluate("cah", named)
    assert [r.name for r in a.rows] == [r.name for r in b.rows]
    assert all(r.error is None for r in a.rows + b.rows)


def test_solver_failure_becomes_row_error():
    big = _named_set(count=2, markets=14)  # beyond the oracle guard
    small = _named_set(count=2)
    report = ev.evaluate("oracle", small + big)
    assert len(report.failures) == 2
    assert all("guarded" in r.error for r in report.failures)
    assert report.mean_objective is not None  # aggregated over successes
    text = ev.report_text(report)
    assert "warning: 2 of 4 instances failed" in text


def test_gap_computation_against_optima():
    named = _named_set()
    optima = {name: brute_force_solve(inst).objective for name, inst in named}
    report = ev.evaluate("gsh", named, optima=optima)
    for row in report.rows:
        expect = (row.objective - optima[row.name]) / optima[row.name]
        assert row.gap == pytest.approx(expect)
        assert row.gap >= 0.0


def test_reports_reproducible_except_timing(params):
    named = _named_set()
    a = ev.evaluate("rl-e2e", named, params=params, policy=SMALL)
    b = ev.evaluate("rl-e2e", named, params=params, policy=SMALL)

    def strip_seconds(csv: str) -> str:
        rows = [line.split(",") for line in csv.splitlines()]
        return "\n".join(",".join(c for i, c in enumerate(r) if i != 2) for r in rows)

    assert strip_seconds(ev.report_csv(a)) == strip_seconds(ev.report_csv(b))


def test_csv_format():
    named = _named_set(count=2)
    optima = {name: brute_force_solve(inst).objective for name, inst in named}
    csv = ev.report_csv(ev.evaluate("cah+trh", named, optima=optima))
    lines = csv.splitlines()
    assert lines[0] == "instance,objective,seconds,gap_pct,error"
    assert len(lines) == 4  # header + 2 rows + mean
    assert lines[-1].startswith("mean,")
    first = lines[1].split(",")
    assert first[0] == "inst_000"
    assert first[1].isdigit()
    float(first[2])  # parses as seconds
    float(first[3])  # gap percent with two decimals
    assert "." in first[3] and len(first[3].split(".")[1]) == 2


def test_text_report_alignment_and_percent():
    named = _named_set(count=3)
    optima = {name: brute_force_solve(inst).objective for name, inst in named}
    text = ev.report_text(ev.evaluate("gsh+trh", named, optima=optima))
    assert "strategy: gsh+trh" in text
    assert "%" in text
    header_line = next(l for l in text.splitlines() if l.startswith("instance"))
    assert "objective" in header_line and "gap" in header_line


def test_parse_opt_file(tmp_path):
    p = tmp_path / "opt.txt"
    p.write_text("# reference optima\ninst_000 123\ninst_001 456\n\n")
    assert ev.parse_opt_file(p) == {"inst_000": 123, "inst_001": 456}
    bad = tmp_path / "bad.txt"
    bad.write_text("inst_000 12 extra\n")
    with pytest.raises(ParseError, match="line 1"):
        ev.parse_opt_file(bad)
    nonint = tmp_path / "nonint.txt"
    nonint.write_text("inst_000 12.5\n")
    with pytest.raises(ParseError, match="not an integer"):
        ev.parse_opt_file(nonint)


def test_evaluate_accepts_custom_callable(inst):
    report = ev.evaluate(gsh_trh, [("x", inst)])
    assert report.strategy == "gsh_trh"
    assert report.rows[0].error is None
