"""Policy graph contract and shared pieces (exploration schedule, base class).

A policy graph bundles everything algorithm-specific: action computation,
trajectory postprocessing, the loss and its gradients, weight access, and
utility functions (target sync, schedule updates). Optimizers and
evaluators only ever touch this surface, which is what makes execution
strategies swappable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor


@dataclass(frozen=True)
class ExplorationSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.05
    decay_steps: int = 10_000

    def __post_init__(self):
        for v in (self.eps_start, self.eps_end):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"epsilon bounds must be in [0,1], got {v}")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be >= 1")


def epsilon_at(schedule: ExplorationSchedule, t: int) -> float:
    """Linear interpolation from eps_start to eps_end, clamped at the end."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t >= schedule.decay_steps:
        return schedule.eps_end
    frac = t / schedule.decay_steps
    return schedule.eps_start + frac * (schedule.eps_end - schedule.eps_start)


class PolicyGraph:
    """Abstract bundle of policy, postprocessor, loss, weights, utilities."""

    #: aux column names emitted by act(), fixed per graph
    aux_output_names: tuple[str, ...] = ()
    #: per-row hidden state width (reference graphs are stateless)
    hidden_dim: int = 0

    def __init__(self, obs_dim: int, n_outputs: int, config: dict | None,
                 seed: int):
        self.obs_dim = obs_dim
        self.config = dict(config or {})
        self._rng = np.random.default_rng(seed)
        hidden = tuple(self.config.get("hidden_sizes", (64, 64)))
        self.params = tensor.init_mlp([obs_dim, *hidden, n_outputs], seed=seed)

    # -- weights -------------------------------------------------------------

    def get_weights(self) -> tensor.MlpParams:
        return self.params

    def set_weights(self, weights: tensor.MlpParams) -> None:
        self.params = weights

    # -- algorithm surface ----------------------------------------------------

    def act(self, obs: np.ndarray, h: np.ndarray, explore: bool = True):
        """-> (actions, h_next, aux dict of per-row arrays)."""
        raise NotImplementedError

    def postprocess(self, batch, peer_batches=()):
        """Transform a trajectory fragment; peers carry other agents' rows."""
        return batch

    def gradients(self, batch):
        """-> (loss, gradient set); a pure function of (weights, batch)."""
        raise NotImplementedError

    def empty_hidden(self, rows: int) -> np.ndarray:
        return np.zeros((rows, self.hidden_dim))

    def _sample_categorical(self, logp: np.ndarray) -> np.ndarray:
        """Inverse-CDF sampling per row from log-probabilities."""
        probs = np.exp(logp)
        cum = np.cumsum(probs, axis=1)
        draws = self._rng.random((len(probs), 1))
        return (draws > cum).sum(axis=1).astype(np.int64)
