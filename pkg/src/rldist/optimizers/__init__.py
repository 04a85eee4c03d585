"""Swappable policy optimizers: the distributed execution strategies."""

from .apex import ApexOptimizer, ReplayActor, apex_epsilons
from .async_opt import AsyncOptimizer
from .base import (
    AllEvaluatorsFailed,
    BufferEmpty,
    OptimizerStats,
    OutOfMemoryBudget,
    PolicyOptimizer,
    ShardUnavailable,
    gather_surviving,
    straggler_tolerant_gather,
)
from .param_server import ParamServerOptimizer, ParamShardActor, shard_bounds
from .replay import ReplayBuffer, ReplayOptimizer
from .strategy import AdaptiveStrategySelector, InsufficientHistory, select_strategy
from .sync import LocalMultipassOptimizer, SyncOptimizer

__all__ = [
    "AdaptiveStrategySelector",
    "AllEvaluatorsFailed",
    "ApexOptimizer",
    "AsyncOptimizer",
    "BufferEmpty",
    "InsufficientHistory",
    "LocalMultipassOptimizer",
    "OptimizerStats",
    "OutOfMemoryBudget",
    "ParamServerOptimizer",
    "ParamShardActor",
    "PolicyOptimizer",
    "ReplayActor",
    "ReplayBuffer",
    "ReplayOptimizer",
    "ShardUnavailable",
    "SyncOptimizer",
    "apex_epsilons",
    "gather_surviving",
    "select_strategy",
    "shard_bounds",
    "straggler_tolerant_gather",
]
