"""Policy graphs: the algorithm-specific bundle of acting, postprocessing,
losses, weights, and utilities."""

from .advantages import AdvantageConfig, compute_gae, n_step_returns, nstep_parts
from .graph import ExplorationSchedule, PolicyGraph, epsilon_at
from .graphs import (
    BOOT_DISCOUNT,
    BOOT_OBS,
    GRAPH_CLASSES,
    NSTEP_REWARDS,
    CategoricalPGGraph,
    ContinuousPolicyGraph,
    DQNGraph,
    PPOGraph,
    SharedRewardPGGraph,
    dqn_loss,
    make_graph,
    pg_loss,
    ppo_clip_loss,
)

__all__ = [
    "AdvantageConfig",
    "BOOT_DISCOUNT",
    "BOOT_OBS",
    "CategoricalPGGraph",
    "ContinuousPolicyGraph",
    "DQNGraph",
    "ExplorationSchedule",
    "GRAPH_CLASSES",
    "NSTEP_REWARDS",
    "PolicyGraph",
    "PPOGraph",
    "SharedRewardPGGraph",
    "compute_gae",
    "dqn_loss",
    "epsilon_at",
    "make_graph",
    "n_step_returns",
    "nstep_parts",
    "pg_loss",
    "ppo_clip_loss",
]
