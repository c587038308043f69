"""Policy-gradient training with a greedy-rollout baseline.

The single-distribution trainer samples one tour per instance from the
learner and compares it with the baseline network's deterministic
greedy tour on the same instance; the per-instance advantage weights
the log-probability of the sampled tour. The baseline is refreshed by
whole-parameter copy whenever a one-sided paired t-test on a fresh
held-out set says the learner is significantly better.

The meta trainer wraps the same update: per outer step it samples a
distribution, adapts a copy of the meta parameters for a few inner
steps against a shared baseline, and moves the meta parameters a
fraction beta toward the adapted copy (first-order only; the
second-order chain through the inner updates is deliberately dropped).

All randomness is derived from the config seed through pure functions,
so a full desk-scale run is bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .generate import GeneratorSpec, generate_many
from .model import TppInstance
from .policy import PolicyConfig, init_policy_params, model_card, rollout_batch

LOSS_SCALE = 1000.0  # integer objectives / 1000 keep advantages O(1)

# seed-derivation tags; each stream of randomness gets its own lane
_TAG_INIT = 0
_TAG_BATCH = 1
_TAG_EVAL = 2
_TAG_ROLLOUT = 3
_TAG_PICK = 4
_TAG_EVAL_PICK = 5
_TAG_FINE_TUNE = 6
_TAG_META_BATCH = 7
_TAG_META_ROLLOUT = 8


def derived_seed(*parts: int) -> int:
    """Deterministic child seed from a tuple of integers."""
    return int(np.random.SeedSequence(tuple(parts)).generate_state(1, dtype=np.uint64)[0])


def training_batch(dist: GeneratorSpec, seed: int, epoch: int, step: int,
                   size: int) -> list[TppInstance]:
    return generate_many(dist.with_seed(derived_seed(seed, _TAG_BATCH, epoch, step)), size)


def rollout_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng(derived_seed(seed, _TAG_ROLLOUT, epoch, step))


def evaluation_batch(dist: GeneratorSpec, seed: int, epoch: int,
                     size: int) -> list[TppInstance]:
    return generate_many(dist.with_seed(derived_seed(seed, _TAG_EVAL, epoch)), size)


def meta_batch(dist: GeneratorSpec, seed: int, epoch: int, step: int, inner: int,
               size: int) -> list[TppInstance]:
    return generate_many(
        dist.with_seed(derived_seed(seed, _TAG_META_BATCH, epoch, step, inner)), size
    )


def meta_rollout_rng(seed: int, epoch: int, step: int, inner: int) -> np.random.Generator:
    return np.random.default_rng(derived_seed(seed, _TAG_META_ROLLOUT, epoch, step, inner))


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Single-distribution training run. Defaults follow the training
    table: 100 epochs of 2500 steps at batch 512, lr 1e-4, alpha 0.05."""

    dist: GeneratorSpec
    epochs: int = 100
    batch_size: int = 512
    steps_per_epoch: int = 2500
    lr: float = 1e-4
    significance: float = 0.05
    eval_size: int = 256
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.steps_per_epoch, self.eval_size) < 1:
            raise ValueError("epochs, batch_size, steps_per_epoch, eval_size must be >= 1")
        if not 0 < self.significance < 1:
            raise ValueError("significance must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def to_json_dict(self) -> dict:
        return {
            "dist": self.dist.spec_string(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "steps_per_epoch": self.steps_per_epoch,
            "lr": self.lr,
            "significance": self.significance,
            "eval_size": self.eval_size,
            "seed": self.seed,
            "policy": self.policy.to_dict(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TrainConfig":
        base = TrainConfig(dist=GeneratorSpec.parse(d["dist"]))
        policy = PolicyConfig.from_dict(d["policy"]) if "policy" in d else PolicyConfig()
        return TrainConfig(
            dist=GeneratorSpec.parse(d["dist"]),
            epochs=int(d.get("epochs", base.epochs)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            steps_per_epoch=int(d.get("steps_per_epoch", base.steps_per_epoch)),
            lr=float(d.get("lr", base.lr)),
            significance=float(d.get("significance", base.significance)),
            eval_size=int(d.get("eval_size", base.eval_size)),
            seed=int(d.get("seed", base.seed)),
            policy=policy,
        )


@dataclass(frozen=True)
class MetaConfig:
    """Meta-training over a set of instance distributions.

    Defaults per the training table: 2500 outer steps per epoch, 2
    inner steps, outer step size 0.8; sampling weights default uniform.
    """

    dists: tuple[GeneratorSpec, ...]
    weights: tuple[float, ...] | None = None
    epochs: int = 1
    outer_steps_per_epoch: int = 2500
    inner_steps: int = 2
    beta: float = 0.8
    batch_size: int = 512
    lr: float = 1e-4
    significance: float = 0.05
    eval_size: int = 256
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        if not self.dists:
            raise ValueError("meta-training needs at least one distribution")
        if self.weights is not None:
            if len(self.weights) != len(self.dists):
                raise ValueError("one weight per distribution")
            if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
                raise ValueError("weights must be nonnegative and sum to 1")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")

    @property
    def resolved_weights(self) -> tuple[float, ...]:
        if self.weights is not None:
            return self.weights
        return tuple([1.0 / len(self.dists)] * len(self.dists))

    def to_json_dict(self) -> dict:
        return {
            "dists": [d.spec_string() for d in self.dists],
            "weights": list(self.resolved_weights),
            "epochs": self.epochs,
            "outer_steps_per_epoch": self.outer_steps_per_epoch,
            "inner_steps": self.inner_steps,
            "beta": self.beta,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "significance": self.significance,
            "eval_size": self.eval_size,
            "seed": self.seed,
            "policy": self.policy.to_dict(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "MetaConfig":
        dists = tuple(GeneratorSpec.parse(s) for s in d["dists"])
        base = MetaConfig(dists=dists)
        policy = PolicyConfig.from_dict(d["policy"]) if "policy" in d else PolicyConfig()
        weights = tuple(float(w) for w in d["weights"]) if "weights" in d else None
        return MetaConfig(
            dists=dists,
            weights=weights,
            epochs=int(d.get("epochs", base.epochs)),
            outer_steps_per_epoch=int(d.get("outer_steps_per_epoch", base.outer_steps_per_epoch)),
            inner_steps=int(d.get("inner_steps", base.inner_steps)),
            beta=float(d.get("beta", base.beta)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            lr=float(d.get("lr", base.lr)),
            significance=float(d.get("significance", base.significance)),
            eval_size=int(d.get("eval_size", base.eval_size)),
            seed=int(d.get("seed", base.seed)),
            policy=policy,
        )


@dataclass(frozen=True)
class TrainRecord:
    kind: str  # "step" or "refresh"
    epoch: int
    step: int
    mean_sampled: float
    mean_baseline: float

    def line(self) -> str:
        if self.kind == "refresh":
            return (f"epoch {self.epoch:3d} refresh baseline "
                    f"(policy {self.mean_sampled:.3f} vs baseline {self.mean_baseline:.3f})")
        return (f"epoch {self.epoch:3d} step {self.step:5d} "
                f"sampled {self.mean_sampled:10.3f} baseline {self.mean_baseline:10.3f}")


# ---------------------------------------------------------------------------
# core update
# ---------------------------------------------------------------------------


def reinforce_update(
    params: ParamStore,
    baseline: ParamStore,
    instances: Sequence[TppInstance],
    lr: float,
    policy: PolicyConfig,
    rng: np.random.Generator | None,
    mode: str = "sample",
    bn_training: bool = True,
) -> dict:
    """One policy-gradient step; returns batch statistics."""
    if not instances:
        raise ValueError("empty batch")
    out = rollout_batch(instances, params, policy, mode=mode, rng=rng,
                        bn_training=bn_training)
    with ad.no_grad():
        ref = rollout_batch(instances, baseline, policy, mode="greedy")
    advantage = (out.objectives - ref.objectives) / LOSS_SCALE
    params.zero_grad()
    loss = ad.mean(ad.mul(out.logp, Tensor(advantage)))
    ad.backward(loss)
    adam_step(params, lr)
    return {
        "mean_sampled": float(out.objectives.mean()),
        "mean_baseline": float(ref.objectives.mean()),
        "mean_advantage": float(advantage.mean()),
        "loss": float(loss.data),
    }


def adam_step(store: ParamStore, lr: float) -> None:
    ad.adam_step(store, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def baseline_refresh_test(
    policy_losses: Sequence[float], baseline_losses: Sequence[float], alpha: float,
) -> bool:
    """One-sided paired t-test: is the policy significantly better?

    Differences are baseline - policy, so positive means the policy
    improved. Zero variance degenerates to the sign of the mean.
    """
    pol = np.asarray(policy_losses, dtype=np.float64)
    bl = np.asarray(baseline_losses, dtype=np.float64)
    if pol.shape != bl.shape or pol.ndim != 1 or len(pol) < 2:
        raise ValueError("need equal-length paired samples, n >= 2")
    diff = bl - pol
    sd = diff.std(ddof=1)
    md = diff.mean()
    if sd == 0.0:
        return bool(md > 0.0)
    n = len(diff)
    t = md / (sd / np.sqrt(n))
    p_value = float(sps.t.sf(t, df=n - 1))
    return bool(p_value < alpha)


def _greedy_objectives(instances, params, policy) -> np.ndarray:
    with ad.no_grad():
        return rollout_batch(instances, params, policy, mode="greedy").objectives


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------


def train(
    config: TrainConfig,
    initial: ParamStore | None = None,
    log_fn: Callable[[str], None] | None = None,
) -> tuple[ParamStore, list[TrainRecord]]:
    """REINFORCE with a greedy-rollout baseline; returns trained params
    and the full metric log (one record per step plus refresh events)."""
    params = initial if initial is not None else init_policy_params(
        config.policy, np.random.default_rng(derived_seed(config.seed, _TAG_INIT))
    )
    baseline = params.copy(reset_adam=True)
    records: list[TrainRecord] = []

    def emit(rec: TrainRecord):
        records.append(rec)
        if log_fn is not None:
            log_fn(rec.line())

    for epoch in range(config.epochs):
        for step in range(config.steps_per_epoch):
            batch = training_batch(config.dist, config.seed, epoch, step, config.batch_size)
            rng = rollout_rng(config.seed, epoch, step)
            stats = reinforce_update(params, baseline, batch, config.lr, config.policy, rng)
            emit(TrainRecord("step", epoch, step, stats["mean_sampled"],
                             stats["mean_baseline"]))
        held_out = evaluation_batch(config.dist, config.seed, epoch, config.eval_size)
        pol_obj = _greedy_objectives(held_out, params, config.policy) / LOSS_SCALE
        bl_obj = _greedy_objectives(held_out, baseline, config.policy) / LOSS_SCALE
        if baseline_refresh_test(pol_obj, bl_obj, config.significance):
            baseline = params.copy(reset_adam=True)
            emit(TrainRecord("refresh", epoch, -1,
                             float(pol_obj.mean() * LOSS_SCALE),
                             float(bl_obj.mean() * LOSS_SCALE)))
    return params, records


def _outer_move(params: ParamStore, adapted: ParamStore, beta: float) -> None:
    # first-order move theta += beta * (theta_in - theta), computed in
    # convex form so beta = 0 and beta = 1 are exact; running statistics
    # blend with the same coefficient
    for name in params.names():
        p = params.params[name].data
        p[...] = (1.0 - beta) * p + beta * adapted.params[name].data
    for name in params.buffers:
        b = params.buffers[name]
        b[...] = (1.0 - beta) * b + beta * adapted.buffers[name]


def meta_train(
    config: MetaConfig,
    initial: ParamStore | None = None,
    log_fn: Callable[[str], None] | None = None,
) -> tuple[ParamStore, list[TrainRecord]]:
    """First-order meta-training across instance distributions."""
    params = initial if initial is not None else init_policy_params(
        config.policy, np.random.default_rng(derived_seed(config.seed, _TAG_INIT))
    )
    baseline = params.copy(reset_adam=True)
    weights = np.array(config.resolved_weights)
    records: list[TrainRecord] = []

    def emit(rec: TrainRecord):
        records.append(rec)
        if log_fn is not None:
            log_fn(rec.line())

    for epoch in range(config.epochs):
        for step in range(config.outer_steps_per_epoch):
            pick_rng = np.random.default_rng(derived_seed(config.seed, _TAG_PICK, epoch, step))
            dist = config.dists[int(pick_rng.choice(len(config.dists), p=weights))]
            adapted = params.copy(reset_adam=True)
            last = {"mean_sampled": float("nan"), "mean_baseline": float("nan")}
            for j in range(config.inner_steps):
                batch = meta_batch(dist, config.seed, epoch, step, j, config.batch_size)
                rng = meta_rollout_rng(config.seed, epoch, step, j)
                last = reinforce_update(adapted, baseline, batch, config.lr,
                                        config.policy, rng)
            _outer_move(params, adapted, config.beta)
            emit(TrainRecord("step", epoch, step, last["mean_sampled"],
                             last["mean_baseline"]))
        pick_rng = np.random.default_rng(derived_seed(config.seed, _TAG_EVAL_PICK, epoch))
        eval_dist = config.dists[int(pick_rng.choice(len(config.dists), p=weights))]
        held_out = evaluation_batch(eval_dist, config.seed, epoch, config.eval_size)
        pol_obj = _greedy_objectives(held_out, params, config.policy) / LOSS_SCALE
        bl_obj = _greedy_objectives(held_out, baseline, config.policy) / LOSS_SCALE
        if baseline_refresh_test(pol_obj, bl_obj, config.significance):
            baseline = params.copy(reset_adam=True)
            emit(TrainRecord("refresh", epoch, -1,
                             float(pol_obj.mean() * LOSS_SCALE),
                             float(bl_obj.mean() * LOSS_SCALE)))
    return params, records


def fine_tune(
    params: ParamStore,
    dist: GeneratorSpec,
    steps: int,
    batch_size: int = 512,
    lr: float = 1e-4,
    policy: PolicyConfig | None = None,
    seed: int = 0,
) -> ParamStore:
    """Adapt a parameter set to one distribution; the baseline is a
    frozen copy of the starting parameters."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    policy = policy if policy is not None else PolicyConfig()
    adapted = params.copy(reset_adam=True)
    baseline = params.copy(reset_adam=True)
    for j in range(steps):
        batch = generate_many(
            dist.with_seed(derived_seed(seed, _TAG_FINE_TUNE, j)), batch_size
        )
        rng = np.random.default_rng(derived_seed(seed, _TAG_FINE_TUNE, j, 1))
        reinforce_update(adapted, baseline, batch, lr, policy, rng)
    return adapted


# ---------------------------------------------------------------------------
# checkpoint helpers
# ---------------------------------------------------------------------------


def save_policy(path, params: ParamStore, policy: PolicyConfig,
                extra_meta: dict | None = None) -> None:
    meta = {
        "hyperparams": policy.to_dict(),
        "model_card": model_card(policy),
    }
    if extra_meta:
        meta.update(extra_meta)
    ad.save_checkpoint(params, path, meta)


def load_policy(path) -> tuple[ParamStore, PolicyConfig, dict]:
    params, meta = ad.load_checkpoint(path)
    policy = PolicyConfig.from_dict(meta["hyperparams"])
    return params, policy, meta


def rng_state_meta(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    return json.loads(json.dumps(rng.bit_generator.state, default=str))
