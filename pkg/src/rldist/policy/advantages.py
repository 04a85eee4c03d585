"""Trajectory postprocessing math: generalized advantage estimation and
n-step bootstrapped return targets. Episodes never bleed across done
boundaries; arrays may hold several episodes back to back."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import ShapeMismatch


@dataclass(frozen=True)
class AdvantageConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")


def compute_gae(rewards, value_preds, dones, bootstrap_value: float,
                cfg: AdvantageConfig):
    """Backward-recurrence GAE.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    V_{t+1} is the next row's prediction, or bootstrap_value after the last
    row of a truncated (non-terminal) trajectory. Returns (advantages,
    value_targets) with value_targets = A + V.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    value_preds = np.asarray(value_preds, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not rewards.shape == value_preds.shape == dones.shape:
        raise ShapeMismatch("rewards, value_preds, dones must be row-aligned")
    n = len(rewards)
    advantages = np.zeros(n)
    next_value = float(bootstrap_value)
    next_adv = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + cfg.gamma * next_value * live - value_preds[t]
        next_adv = delta + cfg.gamma * cfg.lam * live * next_adv
        advantages[t] = next_adv
        next_value = value_preds[t]
    return advantages, advantages + value_preds


def nstep_parts(rewards, dones, n: int, gamma: float):
    """Per-row pieces of the n-step return: the discounted reward sum over
    the next min(n, remaining) steps, the index of the row whose new_obs
    bootstraps, and the bootstrap discount (0 past a terminal)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != dones.shape:
        raise ShapeMismatch("rewards and dones must be row-aligned")
    if n < 1:
        raise ValueError("n must be >= 1")
    size = len(rewards)
    partial = np.zeros(size)
    boot_index = np.zeros(size, dtype=np.int64)
    boot_discount = np.zeros(size)
    for t in range(size):
        acc, discount = 0.0, 1.0
        j = t
        for k in range(n):
            j = t + k
            acc += discount * rewards[j]
            discount *= gamma
            if dones[j] or j == size - 1:
                break
        partial[t] = acc
        boot_index[t] = j
        boot_discount[t] = 0.0 if dones[j] else discount
    return partial, boot_index, boot_discount


def n_step_returns(rewards, dones, bootstrap_q, n: int, gamma: float):
    """targets_t = sum_{k<n} gamma^k r_{t+k} + gamma^n * bootstrap, truncated
    at done. bootstrap_q[j] is the value estimate after step j (i.e. at
    o_{j+1}), so the n-step target bootstraps from bootstrap_q[t+n-1]."""
    bootstrap_q = np.asarray(bootstrap_q, dtype=np.float64)
    partial, boot_index, boot_discount = nstep_parts(rewards, dones, n, gamma)
    if bootstrap_q.shape != partial.shape:
        raise ShapeMismatch("bootstrap_q must be row-aligned")
    return partial + boot_discount * bootstrap_q[boot_index]
