"""Trainer composition: a policy graph, a set of evaluator actors, and one
policy optimizer, driven one optimizer step per train() call.

Every trainer exposes the same narrow surface (train / train_k /
get_weights / set_weights / evaluate / apply_hyperparams / close), which is
what lets outer loops (population search, hyperparameter tuning) drive any
trainer as a nested actor with zero trainer-code changes.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import asdict, dataclass, field

from ..envs import ENV_NAMES, make_env
from ..evaluation import EvaluatorConfig, PolicyEvaluator
from ..policy import make_graph
from ..taskrt import current_context


@dataclass
class TrainerConfig:
    algorithm: str = "pg"
    env: str = "gridworld"
    num_evaluators: int = 2
    seed: int = 0
    batch_size: int = 200        # rows per evaluator sample
    num_parallel_envs: int = 1
    sample_mode: str = "truncate_episodes"
    graph: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)   # {"kind": ..., params...}
    env_options: dict = field(default_factory=dict)
    target_interval: int = 5     # DQN target sync cadence (iterations)
    reward_window: int = 100

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainerConfig":
        return TrainerConfig(**d)

    def validate(self) -> list[str]:
        """Full range validation; returns violation messages naming keys."""
        from . import ALGORITHMS  # late import: registry lives in __init__

        errors = []
        if self.algorithm not in ALGORITHMS:
            errors.append(f"algorithm: unknown {self.algorithm!r} "
                          f"(choose from {sorted(ALGORITHMS)})")
        if self.env not in ENV_NAMES:
            errors.append(f"env: unknown {self.env!r}")
        if self.num_evaluators < 1:
            errors.append(f"num_evaluators: must be >= 1, got {self.num_evaluators}")
        if self.batch_size < 1:
            errors.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.num_parallel_envs < 1:
            errors.append(f"num_parallel_envs: must be >= 1, "
                          f"got {self.num_parallel_envs}")
        if self.target_interval < 1:
            errors.append(f"target_interval: must be >= 1, "
                          f"got {self.target_interval}")
        gamma = self.graph.get("gamma")
        if gamma is not None and not 0.0 < gamma <= 1.0:
            errors.append(f"graph.gamma: must be in (0, 1], got {gamma}")
        lam = self.graph.get("lam")
        if lam is not None and not 0.0 <= lam <= 1.0:
            errors.append(f"graph.lam: must be in [0, 1], got {lam}")
        clip = self.graph.get("clip")
        if clip is not None and clip <= 0:
            errors.append(f"graph.clip: must be > 0, got {clip}")
        for key in ("eps_start", "eps_end"):
            v = self.graph.get(key)
            if v is not None and not 0.0 <= v <= 1.0:
                errors.append(f"graph.{key}: must be in [0, 1], got {v}")
        kind = self.optimizer.get("kind")
        if kind is not None and kind not in (
                "sync", "async", "param_server", "local_multipass", "replay",
                "apex"):
            errors.append(f"optimizer.kind: unknown {kind!r}")
        stepsize = self.optimizer.get("stepsize")
        if stepsize is not None and stepsize <= 0:
            errors.append(f"optimizer.stepsize: must be > 0, got {stepsize}")
        return errors


@dataclass
class IterationResult:
    iteration: int
    episode_reward_mean: float | None
    episodes_total: int
    timesteps_total: int
    optimizer_stats: dict
    wall_time: float
    custom: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "iter": self.iteration,
            "episode_reward_mean": self.episode_reward_mean,
            "episodes_total": self.episodes_total,
            "timesteps_total": self.timesteps_total,
            "wall_time": self.wall_time,
        }
        out.update({f"opt_{k}": v for k, v in self.optimizer_stats.items()})
        out.update(self.custom)
        return out


class Trainer:
    """Base trainer: builds graph + evaluators + optimizer from config."""

    graph_kind = "pg"

    def __init__(self, config: TrainerConfig, ctx):
        self.config = config
        self.ctx = ctx
        self.iteration = 0
        self.timesteps_total = 0
        self.episodes_total = 0
        self._rewards = deque(maxlen=config.reward_window)
        probe = make_env(config.env, seed=0, **config.env_options)
        spec = probe.spec()
        self.graph = make_graph(self.graph_kind, spec.obs_dim,
                                spec.action_space, dict(config.graph),
                                seed=config.seed)
        self.evaluators = self._spawn_evaluators()
        self.optimizer = self._build_optimizer()

    # -- composition hooks ---------------------------------------------------

    def _evaluator_graph_overrides(self, index: int) -> dict:
        return {}

    def _spawn_evaluators(self) -> list:
        refs = []
        for i in range(self.config.num_evaluators):
            cfg = EvaluatorConfig(
                batch_size=self.config.batch_size,
                mode=self.config.sample_mode,
                num_parallel_envs=self.config.num_parallel_envs,
                seed=self.config.seed * 10_000 + i + 1,
                env_options=dict(self.config.env_options),
                graph_overrides=self._evaluator_graph_overrides(i),
            )
            refs.append(self.ctx.spawn_actor(
                (PolicyEvaluator,
                 (self.graph_kind, dict(self.config.graph),
                  self.config.env, cfg, i))))
        return refs

    def _build_optimizer(self):
        raise NotImplementedError

    def _after_step(self, stats) -> None:
        """Scheduled utility calls (target sync, schedule advance, ...)."""

    # -- the train loop -------------------------------------------------------

    def _collect_metrics(self) -> None:
        futs = [self.ctx.invoke(ev, "pop_metrics") for ev in self.evaluators]
        for fut in futs:
            try:
                m = self.ctx.get(fut)
            except Exception:
                continue
            self._rewards.extend(m["episode_returns"])
            self.episodes_total += len(m["episode_returns"])

    def train(self) -> IterationResult:
        t0 = time.monotonic()
        stats = self.optimizer.step()
        self.iteration += 1
        self.timesteps_total = stats.samples_collected
        self._after_step(stats)
        self._collect_metrics()
        mean = (float(sum(self._rewards) / len(self._rewards))
                if self._rewards else None)
        return IterationResult(
            iteration=self.iteration,
            episode_reward_mean=mean,
            episodes_total=self.episodes_total,
            timesteps_total=self.timesteps_total,
            optimizer_stats=stats.to_dict(),
            wall_time=time.monotonic() - t0,
        )

    def train_k(self, k: int) -> list[IterationResult]:
        return [self.train() for _ in range(k)]

    # -- generic contract for outer loops --------------------------------------

    def get_weights(self):
        return self.graph.get_weights()

    def set_weights(self, weights) -> None:
        self.graph.set_weights(weights)
        self.optimizer.broadcast_weights()

    def evaluate(self, episodes: int = 5, seed: int | None = None) -> float:
        fut = self.ctx.invoke(self.evaluators[0], "evaluate_episodes",
                              [episodes, True, seed])
        returns = self.ctx.get(fut)
        return float(sum(returns) / len(returns))

    def apply_hyperparams(self, hypers: dict) -> None:
        for key, value in hypers.items():
            if key in ("stepsize", "lr"):
                self.optimizer.stepsize = float(value)
            else:
                self.config.optimizer[key] = value

    def get_hyperparams(self) -> dict:
        return {"stepsize": getattr(self.optimizer, "stepsize", None)}

    def checkpoint_payload(self) -> bytes:
        """Weight checkpoint + config + iteration counter, framed."""
        from .. import tensor
        from ..taskrt import framing

        return framing.encode({
            "weights": tensor.params_to_bytes(self.graph.get_weights()),
            "config": self.config.to_dict(),
            "iteration": self.iteration,
        })

    def close(self) -> None:
        self.optimizer.close()
        for ev in self.evaluators:
            try:
                self.ctx.terminate_actor(ev)
            except Exception:
                pass


class TrainerActor:
    """Hosts any trainer inside an actor: the nested driver loop that makes
    hierarchical compositions (population search, tuning) possible."""

    def __init__(self, config_dict: dict):
        from . import build_trainer  # late import avoids a cycle

        self.trainer = build_trainer(TrainerConfig.from_dict(config_dict),
                                     current_context())

    def train_k(self, k: int) -> list[dict]:
        return [r.to_dict() for r in self.trainer.train_k(k)]

    def get_weights(self):
        return self.trainer.get_weights()

    def set_weights(self, weights) -> None:
        self.trainer.set_weights(weights)

    def evaluate(self, episodes: int = 5, seed: int | None = None) -> float:
        return self.trainer.evaluate(episodes, seed)

    def apply_hyperparams(self, hypers: dict) -> None:
        self.trainer.apply_hyperparams(hypers)

    def get_hyperparams(self) -> dict:
        return self.trainer.get_hyperparams()

    def close(self) -> None:
        self.trainer.close()
