"""Trainer compositions binding graphs, evaluators, and optimizers."""

from .es import (
    ESTrainer,
    FlatAdamOptimizer,
    PerturbationAggregator,
    centered_ranks,
    es_gradient_estimate,
    es_minimize,
    noise_for,
)
from .ppo_es import PopulationESTrainer, select_best
from .trainer import IterationResult, Trainer, TrainerActor, TrainerConfig
from .trainers import A3CTrainer, ApexDQNTrainer, DQNTrainer, PGTrainer, PPOTrainer

ALGORITHMS = {
    "pg": PGTrainer,
    "a3c": A3CTrainer,
    "ppo": PPOTrainer,
    "dqn": DQNTrainer,
    "apex": ApexDQNTrainer,
    "es": ESTrainer,
    "ppo_es": PopulationESTrainer,
}


def build_trainer(config: TrainerConfig, ctx):
    try:
        cls = ALGORITHMS[config.algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {config.algorithm!r}") from None
    return cls(config, ctx)


__all__ = [
    "A3CTrainer",
    "ALGORITHMS",
    "ApexDQNTrainer",
    "DQNTrainer",
    "ESTrainer",
    "FlatAdamOptimizer",
    "IterationResult",
    "PGTrainer",
    "PPOTrainer",
    "PerturbationAggregator",
    "PopulationESTrainer",
    "Trainer",
    "TrainerActor",
    "TrainerConfig",
    "build_trainer",
    "centered_ranks",
    "es_gradient_estimate",
    "es_minimize",
    "noise_for",
    "select_best",
]
