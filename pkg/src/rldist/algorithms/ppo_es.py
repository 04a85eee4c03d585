"""Population-based hybrid: an evolutionary outer loop over whole trainers.

The outer step perturbs each member's weights, runs K inner training
iterations in parallel as nested actor tasks, scores members with greedy
evaluation episodes, and re-centers the population on the best performer.
The inner trainer is driven purely through the generic trainer-actor
surface, so any registered algorithm slots in unmodified.
"""

from __future__ import annotations

import time

import numpy as np

from .. import tensor
from .trainer import IterationResult, TrainerActor, TrainerConfig


def select_best(scores) -> int:
    """Index of the highest score; ties break to the lowest index."""
    scores = list(scores)
    best = max(scores)
    return scores.index(best)


class PopulationESTrainer:
    """ES-over-trainers with elitist retention: the best weights seen so far
    always survive, so the population-best score never decreases."""

    def __init__(self, config: TrainerConfig, ctx):
        self.config = config
        self.ctx = ctx
        opt = config.optimizer
        self.population_size = int(opt.get("population", 3))
        if self.population_size < 2:
            raise ValueError("population must be >= 2")
        self.sigma_outer = float(opt.get("sigma_outer", 0.05))
        self.inner_iters = int(opt.get("inner_iters", 1))
        self.eval_episodes = int(opt.get("eval_episodes", 3))
        self.inner_algorithm = str(opt.get("inner_algorithm", "ppo"))
        self._rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self.timesteps_total = 0
        self.episodes_total = 0
        self.best_score: float | None = None
        self.best_weights = None
        self.members = []
        for m in range(self.population_size):
            member_cfg = TrainerConfig.from_dict(config.to_dict())
            member_cfg.algorithm = self.inner_algorithm
            member_cfg.optimizer = dict(opt.get("inner_optimizer", {}))
            member_cfg.seed = config.seed * 100 + m
            self.members.append(self.ctx.spawn_actor(
                (TrainerActor, (member_cfg.to_dict(),)),
            ))
        # the population descends from one parent: member 0's init weights
        parent = self.ctx.get(self.ctx.invoke(self.members[0], "get_weights"))
        ref = self.ctx.put(parent)
        for f in [self.ctx.invoke(m, "set_weights", [ref])
                  for m in self.members[1:]]:
            self.ctx.get(f)

    # -- outer loop ------------------------------------------------------------

    def _perturb_all(self) -> None:
        weight_futs = [self.ctx.invoke(m, "get_weights") for m in self.members]
        weights = [self.ctx.get(f) for f in weight_futs]
        set_futs = []
        for i, (member, w) in enumerate(zip(self.members, weights)):
            if self.best_weights is not None and i == 0:
                continue  # elite slot keeps the best weights unperturbed
            if self.sigma_outer > 0:
                flat = tensor.flatten_params(w)
                eps = self._rng.normal(size=flat.size)
                w = tensor.unflatten_params(w, flat + self.sigma_outer * eps)
            set_futs.append(self.ctx.invoke(member, "set_weights",
                                            [self.ctx.put(w)]))
        for f in set_futs:
            self.ctx.get(f)

    def train(self) -> IterationResult:
        t0 = time.monotonic()
        self._perturb_all()
        train_futs = [self.ctx.invoke(m, "train_k", [self.inner_iters])
                      for m in self.members]
        inner_results = [self.ctx.get(f) for f in train_futs]
        eval_seed = int(self._rng.integers(0, 2**31 - 1))
        score_futs = [self.ctx.invoke(m, "evaluate",
                                      [self.eval_episodes, eval_seed])
                      for m in self.members]
        scores = [float(self.ctx.get(f)) for f in score_futs]
        best_idx = select_best(scores)
        if self.best_score is None or scores[best_idx] >= self.best_score:
            self.best_score = scores[best_idx]
            self.best_weights = self.ctx.get(
                self.ctx.invoke(self.members[best_idx], "get_weights"))
        # re-center every member on the retained best
        ref = self.ctx.put(self.best_weights)
        for f in [self.ctx.invoke(m, "set_weights", [ref])
                  for m in self.members]:
            self.ctx.get(f)
        self.iteration += 1
        for member_history in inner_results:
            last = member_history[-1]
            self.timesteps_total += last["timesteps_total"]
            self.episodes_total += last["episodes_total"]
        return IterationResult(
            iteration=self.iteration,
            episode_reward_mean=self.best_score,
            episodes_total=self.episodes_total,
            timesteps_total=self.timesteps_total,
            optimizer_stats={"steps": self.iteration},
            wall_time=time.monotonic() - t0,
            custom={
                "population_best": self.best_score,
                "population_scores": scores,
                "recentered_on": best_idx,
            },
        )

    def train_k(self, k: int) -> list[IterationResult]:
        return [self.train() for _ in range(k)]

    # -- generic trainer surface -------------------------------------------------

    def get_weights(self):
        if self.best_weights is not None:
            return self.best_weights
        return self.ctx.get(self.ctx.invoke(self.members[0], "get_weights"))

    def set_weights(self, weights) -> None:
        ref = self.ctx.put(weights)
        for f in [self.ctx.invoke(m, "set_weights", [ref])
                  for m in self.members]:
            self.ctx.get(f)
        self.best_weights = weights

    def evaluate(self, episodes: int = 5, seed: int | None = None) -> float:
        return float(self.ctx.get(
            self.ctx.invoke(self.members[0], "evaluate", [episodes, seed])))

    def apply_hyperparams(self, hypers: dict) -> None:
        for f in [self.ctx.invoke(m, "apply_hyperparams", [hypers])
                  for m in self.members]:
            self.ctx.get(f)

    def get_hyperparams(self) -> dict:
        return self.ctx.get(
            self.ctx.invoke(self.members[0], "get_hyperparams"))

    def close(self) -> None:
        for m in self.members:
            try:
                self.ctx.terminate_actor(m)
            except Exception:
                pass
