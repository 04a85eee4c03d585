"""Concrete trainers: policy gradient (with swappable execution strategy),
PPO on the local multi-pass optimizer, DQN on embedded replay, and the
pipelined wide-exploration DQN variant."""

from __future__ import annotations

from ..optimizers import (
    ApexOptimizer,
    AsyncOptimizer,
    LocalMultipassOptimizer,
    ParamServerOptimizer,
    ReplayActor,
    ReplayOptimizer,
    SyncOptimizer,
    apex_epsilons,
)
from .trainer import Trainer


class PGTrainer(Trainer):
    """Vanilla policy gradient. The execution strategy is pure config:
    sync gradient averaging (default), bounded-staleness async, or the
    sharded parameter server."""

    graph_kind = "pg"
    default_optimizer = "sync"

    def _build_optimizer(self):
        opt = dict(self.config.optimizer)
        kind = opt.pop("kind", self.default_optimizer)
        stepsize = opt.pop("stepsize", 0.02)
        if kind == "sync":
            return SyncOptimizer(self.graph, self.evaluators, self.ctx,
                                 sgd_stepsize=stepsize, **opt)
        if kind == "async":
            opt.setdefault("grads_to_apply", len(self.evaluators))
            opt.setdefault("max_in_flight", max(2, len(self.evaluators)))
            return AsyncOptimizer(self.graph, self.evaluators, self.ctx,
                                  sgd_stepsize=stepsize, **opt)
        if kind == "param_server":
            opt.setdefault("num_shards", 2)
            return ParamServerOptimizer(self.graph, self.evaluators, self.ctx,
                                        sgd_stepsize=stepsize, **opt)
        raise ValueError(f"optimizer kind {kind!r} not usable with {type(self).__name__}")


class A3CTrainer(PGTrainer):
    """Policy gradient with asynchronous gradient application by default;
    the parameter-server strategy is the config-selected alternative."""

    default_optimizer = "async"


class PPOTrainer(Trainer):
    """Clipped-surrogate PPO: pooled batches, several SGD epochs on the
    driver, weights broadcast once per step."""

    graph_kind = "ppo"

    def _build_optimizer(self):
        opt = dict(self.config.optimizer)
        opt.pop("kind", None)
        opt.setdefault("stepsize", 3e-4)
        opt.setdefault("epochs", 20)
        opt.setdefault("minibatch_size", 512)
        opt.setdefault("update", "adam")
        opt.setdefault("seed", self.config.seed)
        return LocalMultipassOptimizer(self.graph, self.evaluators, self.ctx,
                                       **opt)


class DQNTrainer(Trainer):
    """DQN with an embedded prioritized replay buffer; target syncs run as a
    scheduled utility, exploration advances with collected timesteps."""

    graph_kind = "dqn"

    def _build_optimizer(self):
        opt = dict(self.config.optimizer)
        opt.pop("kind", None)
        opt.setdefault("stepsize", 0.05)
        opt.setdefault("seed", self.config.seed)
        stepsize = opt.pop("stepsize")
        return ReplayOptimizer(self.graph, self.evaluators, self.ctx,
                               sgd_stepsize=stepsize, **opt)

    def _after_step(self, stats) -> None:
        if self.iteration % self.config.target_interval == 0:
            self.graph.sync_target()
            stats.extras["target_syncs"] = stats.extras.get("target_syncs", 0) + 1
        self.graph.set_exploration_timestep(self.timesteps_total)
        futs = [self.ctx.invoke(ev, "call_graph",
                                ["set_exploration_timestep", self.timesteps_total])
                for ev in self.evaluators]
        for f in futs:
            self.ctx.get(f)


class ApexDQNTrainer(Trainer):
    """DQN behind the pipelined optimizer: a spread of per-evaluator
    exploration rates and dedicated replay actors."""

    graph_kind = "dqn"

    def _evaluator_graph_overrides(self, index: int) -> dict:
        eps = apex_epsilons(self.config.num_evaluators)[index]
        return {"epsilon_override": eps}

    def _build_optimizer(self):
        opt = dict(self.config.optimizer)
        opt.pop("kind", None)
        num_replay = int(opt.pop("num_replay_actors", 2))
        capacity = int(opt.pop("buffer_capacity", 10_000))
        alpha = float(opt.pop("alpha", 0.6))
        opt.setdefault("stepsize", 0.05)
        stepsize = opt.pop("stepsize")
        self.replay_actors = [
            self.ctx.spawn_actor((ReplayActor,
                                  (capacity, alpha, self.config.seed + j)))
            for j in range(num_replay)
        ]
        return ApexOptimizer(self.graph, self.evaluators, self.ctx,
                             self.replay_actors, sgd_stepsize=stepsize, **opt)

    def _after_step(self, stats) -> None:
        if self.iteration % self.config.target_interval == 0:
            self.graph.sync_target()

    def close(self) -> None:
        super().close()
        for actor in getattr(self, "replay_actors", []):
            try:
                self.ctx.terminate_actor(actor)
            except Exception:
                pass
