"""Estimator-style facade over the solver stack.

Each solver is a scikit-learn estimator: constructor arguments are
hyperparameters (introspectable through ``get_params`` / clonable with
``sklearn.base.clone``), ``fit`` prepares internal state, ``predict``
maps instances to Solutions, and ``score`` returns the negated mean
objective so that larger is better.

The heuristic and exact solvers need no fitting; their ``fit`` exists
for pipeline compatibility and input validation only. ``PolicySolver``
is the learned one: ``fit`` on a single instance distribution runs
policy-gradient training, ``fit`` on a list of distributions runs
meta-training, and ``adapt`` fine-tunes the fitted parameters toward a
new distribution.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .evaluate import solve_with_augmentation
from .generate import GeneratorSpec
from .heuristics import cah, cah_trh, gsh, gsh_trh
from .model import Solution, TppInstance, require_valid
from .oracle import brute_force_solve
from .policy import PolicyConfig, rollout
from .training import (
    MetaConfig,
    TrainConfig,
    fine_tune,
    load_policy,
    meta_train,
    save_policy,
    train,
)


def _as_instances(X) -> tuple[list[TppInstance], bool]:
    """Normalize predict input to a list; remember if it was a single."""
    if isinstance(X, TppInstance):
        return [X], True
    items = list(X)
    if not all(isinstance(i, TppInstance) for i in items):
        raise TypeError("predict expects a TppInstance or an iterable of them")
    return items, False


class _InstanceSolver(BaseEstimator):
    """Shared predict/score plumbing; subclasses define _solve_one."""

    def fit(self, X=None, y=None):
        return self

    def _solve_one(self, inst: TppInstance) -> Solution:  # pragma: no cover
        raise NotImplementedError

    def predict(self, X):
        instances, single = _as_instances(X)
        for inst in instances:
            require_valid(inst)
        solutions = [self._solve_one(inst) for inst in instances]
        return solutions[0] if single else solutions

    def score(self, X, y=None) -> float:
        """Negated mean objective (higher is better)."""
        instances, _ = _as_instances(X)
        if not instances:
            raise ValueError("score needs at least one instance")
        preds = self.predict(instances)
        return -float(np.mean([s.objective for s in preds]))


class GreedySavingsSolver(_InstanceSolver):
    """Savings-based tour construction, optionally with route reduction
    and tour re-sequencing applied afterwards."""

    def __init__(self, route_reduction: bool = True):
        self.route_reduction = route_reduction

    def _solve_one(self, inst: TppInstance) -> Solution:
        return gsh_trh(inst) if self.route_reduction else gsh(inst)


class CommodityAddingSolver(_InstanceSolver):
    """Product-driven insertion construction, optionally post-optimized."""

    def __init__(self, route_reduction: bool = True):
        self.route_reduction = route_reduction

    def _solve_one(self, inst: TppInstance) -> Solution:
        return cah_trh(inst) if self.route_reduction else cah(inst)


class ExactSolver(_InstanceSolver):
    """Exhaustive optimum; refuses instances above size_limit markets."""

    def __init__(self, size_limit: int = 12):
        self.size_limit = size_limit

    def _solve_one(self, inst: TppInstance) -> Solution:
        return brute_force_solve(inst, size_limit=self.size_limit)


class PolicySolver(_InstanceSolver):
    """Learned solver.

    fit(GeneratorSpec) trains from scratch on that distribution;
    fit([GeneratorSpec, ...]) meta-trains across them. Fitted state:
    params_ (weights), policy_config_, records_ (metric log).
    """

    def __init__(
        self,
        embedding_dim: int = 128,
        num_encoder_layers: int = 3,
        num_heads: int = 8,
        logit_clip: float = 10.0,
        epochs: int = 1,
        batch_size: int = 64,
        steps_per_epoch: int = 50,
        lr: float = 1e-4,
        significance: float = 0.05,
        eval_size: int = 64,
        inner_steps: int = 2,
        beta: float = 0.8,
        augment: bool = True,
        seed: int = 0,
    ):
        self.embedding_dim = embedding_dim
        self.num_encoder_layers = num_encoder_layers
        self.num_heads = num_heads
        self.logit_clip = logit_clip
        self.epochs = epochs
        self.batch_size = batch_size
        self.steps_per_epoch = steps_per_epoch
        self.lr = lr
        self.significance = significance
        self.eval_size = eval_size
        self.inner_steps = inner_steps
        self.beta = beta
        self.augment = augment
        self.seed = seed

    def _policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            embedding_dim=self.embedding_dim,
            num_encoder_layers=self.num_encoder_layers,
            num_heads=self.num_heads,
            logit_clip=self.logit_clip,
        )

    def fit(self, X, y=None):
        cfg = self._policy_config()
        if isinstance(X, GeneratorSpec):
            train_cfg = TrainConfig(
                dist=X, epochs=self.epochs, batch_size=self.batch_size,
                steps_per_epoch=self.steps_per_epoch, lr=self.lr,
                significance=self.significance, eval_size=self.eval_size,
                seed=self.seed, policy=cfg,
            )
            self.params_, self.records_ = train(train_cfg)
        else:
            dists = tuple(X)
            if not dists or not all(isinstance(d, GeneratorSpec) for d in dists):
                raise TypeError("fit expects a GeneratorSpec or a sequence of them")
            meta_cfg = MetaConfig(
                dists=dists, epochs=self.epochs,
                outer_steps_per_epoch=self.steps_per_epoch,
                inner_steps=self.inner_steps, beta=self.beta,
                batch_size=self.batch_size, lr=self.lr,
                significance=self.significance, eval_size=self.eval_size,
                seed=self.seed, policy=cfg,
            )
            self.params_, self.records_ = meta_train(meta_cfg)
        self.policy_config_ = cfg
        return self

    def adapt(self, dist: GeneratorSpec, steps: int):
        """Fine-tune the fitted parameters toward one distribution."""
        self._check_fitted()
        self.params_ = fine_tune(
            self.params_, dist, steps, batch_size=self.batch_size,
            lr=self.lr, policy=self.policy_config_, seed=self.seed,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValidationError(["PolicySolver is not fitted; call fit or load"])

    def _solve_one(self, inst: TppInstance) -> Solution:
        self._check_fitted()
        if self.augment:
            return solve_with_augmentation(inst, self.params_, self.policy_config_)
        sol, _ = rollout(inst, self.params_, self.policy_config_, mode="greedy")
        return sol

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        save_policy(path, self.params_, self.policy_config_,
                    {"solver_params": self.get_params()})

    @classmethod
    def load(cls, path: str | Path) -> "PolicySolver":
        params, policy_cfg, meta = load_policy(path)
        stored = meta.get("solver_params", {})
        known = cls().get_params()
        solver = cls(**{k: v for k, v in stored.items() if k in known})
        solver.params_ = params
        solver.policy_config_ = policy_cfg
        solver.records_ = []
        return solver
