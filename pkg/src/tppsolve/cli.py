"""Command line interface.

Exit codes: 0 on success, 2 on validation failures (broken instance
files, bad configs, corrupt checkpoints), 3 on infeasibility or solver
errors, 4 on bad command lines.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from .errors import (
    InfeasibleRouteError,
    ParseError,
    SolverError,
    TppError,
    ValidationError,
)
from .evaluate import (
    evaluate,
    make_strategy,
    parse_opt_file,
    report_csv,
    report_text,
    symmetrized,
    MODEL_STRATEGIES,
    STRATEGIES,
)
from .generate import GeneratorSpec, load_any, read_set, write_set
from .model import Solution, Variant, require_valid, validate_instance
from .oracle import export_milp
from .policy import PolicyConfig
from .training import (
    MetaConfig,
    TrainConfig,
    fine_tune,
    load_policy,
    meta_train,
    save_policy,
    train,
)


@click.group(name="tppsolve")
def cli():
    """Traveling purchaser toolkit: generate, solve, train, evaluate."""


def _echo_solution(sol: Solution) -> None:
    click.echo(f"objective {sol.objective}")
    click.echo(f"travel {sol.travel_cost}")
    click.echo(f"purchase {sol.purchase_cost}")
    click.echo("route " + " ".join(str(i) for i in sol.route))
    for (market, product), qty in sorted(sol.plan.items()):
        click.echo(f"buy {market} {product} {qty}")


def _load_model(path: str | None):
    if path is None:
        raise click.UsageError("--model is required for rl-e2e and rl+trh")
    try:
        return load_policy(path)
    except FileNotFoundError:
        raise click.UsageError(f"model checkpoint not found: {path}")
    except TppError:
        raise
    except Exception as e:  # corrupt archive, missing keys, version gate
        raise ValidationError([f"unreadable checkpoint {path}: {e}"])


def _read_config(path: str) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise click.UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError([f"config {path} is not valid JSON: {e}"])
    if not isinstance(payload, dict):
        raise ValidationError([f"config {path} must hold a JSON object"])
    return payload


@cli.command()
@click.option("--variant", type=click.Choice(["u", "r"]), required=True)
@click.option("--markets", type=int, required=True)
@click.option("--products", type=int, required=True)
@click.option("--lambda", "lam", type=float, default=None,
              help="Demand tightness for the restricted variant.")
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              required=True)
def generate(variant, markets, products, lam, count, seed, out_dir):
    """Write a seeded set of instances into a directory."""
    if count < 1:
        raise click.UsageError("--count must be positive")
    try:
        spec = GeneratorSpec(Variant.parse(variant), markets, products,
                             lam, seed)
    except ValueError as e:
        raise click.UsageError(str(e))
    paths = write_set(spec, count, out_dir)
    click.echo(f"wrote {len(paths)} instances to {out_dir}")


@cli.command()
@click.option("--strategy", type=click.Choice(list(STRATEGIES)),
              required=True)
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              default=None, help="Checkpoint for the learned strategies.")
@click.option("--in", "in_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--augment", is_flag=True, default=False,
              help="Take the best solution across the eight isometric "
                   "views of the square (the learned strategies do this "
                   "already).")
def solve(strategy, model_path, in_path, augment):
    """Solve one instance file and print the solution."""
    inst = require_valid(load_any(in_path))
    if strategy in MODEL_STRATEGIES:
        params, policy_cfg, _ = _load_model(model_path)
        solver = make_strategy(strategy, params=params, policy=policy_cfg)
    else:
        solver = make_strategy(strategy)
        if augment:
            solver = symmetrized(solver)
    _echo_solution(solver(inst))


@cli.command(name="train")
@click.option("--config", "config_path",
              type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              required=True)
def train_cmd(config_path, out_path):
    """Train a policy with the rollout baseline; write a checkpoint."""
    payload = _read_config(config_path)
    try:
        config = TrainConfig.from_json_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError([f"bad training config: {e}"])
    params, records = train(config, log_fn=click.echo)
    save_policy(out_path, params, config.policy, extra_meta={
        "train_config": config.to_json_dict(),
        "records": len(records),
    })
    click.echo(f"wrote checkpoint {out_path}")


@cli.command(name="meta-train")
@click.option("--config", "config_path",
              type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              required=True)
def meta_train_cmd(config_path, out_path):
    """Meta-train across distributions; write a checkpoint."""
    payload = _read_config(config_path)
    try:
        config = MetaConfig.from_json_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError([f"bad meta-training config: {e}"])
    params, records = meta_train(config, log_fn=click.echo)
    save_policy(out_path, params, config.policy, extra_meta={
        "meta_config": config.to_json_dict(),
        "records": len(records),
    })
    click.echo(f"wrote checkpoint {out_path}")


@cli.command(name="fine-tune")
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--dist", "dist_spec", type=str, required=True,
              help="Target distribution, e.g. u:15x10 or r:50x50:0.95.")
@click.option("--steps", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def fine_tune_cmd(model_path, dist_spec, steps, out_path, batch_size, lr,
                  seed):
    """Adapt a trained policy to one distribution for a few steps."""
    if steps < 0:
        raise click.UsageError("--steps must be nonnegative")
    params, policy_cfg, meta = _load_model(model_path)
    try:
        dist = GeneratorSpec.parse(dist_spec)
    except ValueError as e:
        raise click.UsageError(str(e))
    adapted = fine_tune(params, dist, steps, batch_size=batch_size, lr=lr,
                        policy=policy_cfg, seed=seed)
    save_policy(out_path, adapted, policy_cfg, extra_meta={
        "fine_tuned_from": str(model_path),
        "fine_tune": {"dist": dist.spec_string(), "steps": steps,
                      "batch_size": batch_size, "lr": lr, "seed": seed},
        "parent_meta": {k: v for k, v in meta.items()
                        if k in ("train_config", "meta_config")},
    })
    click.echo(f"wrote checkpoint {out_path}")


@cli.command(name="eval")
@click.option("--strategy", type=click.Choice(list(STRATEGIES)),
              required=True)
@click.option("--set", "set_dir", type=click.Path(file_okay=False),
              required=True)
@click.option("--opt-file", type=click.Path(dir_okay=False), default=None,
              help="Known optima, one 'name objective' pair per line.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              default=None, help="Checkpoint for the learned strategies.")
def eval_cmd(strategy, set_dir, opt_file, report_path, model_path):
    """Run one strategy over an instance set; write a CSV report."""
    instances = read_set(set_dir)
    if not instances:
        raise click.UsageError(f"no instances found in {set_dir}")
    params = policy_cfg = None
    if strategy in MODEL_STRATEGIES:
        params, policy_cfg, _ = _load_model(model_path)
    optima = parse_opt_file(opt_file) if opt_file else None
    report = evaluate(strategy, instances, params=params,
                      policy=policy_cfg, optima=optima)
    Path(report_path).write_text(report_csv(report))
    click.echo(report_text(report))
    click.echo(f"wrote report {report_path}")
    if not report.successes:
        raise SolverError(
            f"all {len(report.rows)} instances failed; "
            f"first error: {report.rows[0].error}"
        )


@cli.command(name="export-milp")
@click.option("--in", "in_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              required=True)
def export_milp_cmd(in_path, out_path):
    """Write the arc-based mixed-integer program in LP text format."""
    inst = require_valid(load_any(in_path))
    text = export_milp(inst)
    Path(out_path).write_text(text)
    click.echo(f"wrote {len(text.splitlines())} LP lines to {out_path}")


@cli.command()
@click.option("--in", "in_path", type=click.Path(dir_okay=False),
              required=True)
def validate(in_path):
    """Check one instance file against the structural contract."""
    inst = load_any(in_path)
    problems = validate_instance(inst)
    if problems:
        raise ValidationError(problems)
    click.echo(f"{in_path}: valid "
               f"({inst.num_markets} markets, {inst.num_products} products, "
               f"{inst.variant.value.upper()})")


def main(argv=None) -> int:
    """Console entry point with the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="tppsolve")
        return 0
    except click.exceptions.Exit as e:  # --help and friends
        return int(e.exit_code)
    except click.UsageError as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 4
    except click.ClickException as e:
        e.show()
        return 4
    except ValidationError as e:
        for violation in e.violations:
            click.echo(f"invalid: {violation}", err=True)
        return 2
    except ParseError as e:
        click.echo(f"invalid: {e}", err=True)
        return 2
    except (InfeasibleRouteError, SolverError) as e:
        click.echo(f"solver error: {e}", err=True)
        return 3
    except TppError as e:
        click.echo(f"error: {e}", err=True)
        return 3
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
