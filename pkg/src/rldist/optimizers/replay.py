"""Prioritized experience replay: a bounded FIFO ring with alpha-weighted
sampling, plus the optimizer that embeds one next to the local graph."""

from __future__ import annotations

import time

import numpy as np

from .. import tensor
from ..evaluation import ensure_batch
from ..sample_batch import SampleBatch
from .base import BufferEmpty, OptimizerStats, PolicyOptimizer, gather_surviving


class ReplayBuffer:
    """Ring storage of transitions with priorities; sampling is proportional
    to (p + eps)^alpha; eviction is strictly FIFO."""

    def __init__(self, capacity: int, alpha: float = 0.6,
                 priority_eps: float = 1e-6, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.alpha = alpha
        self.priority_eps = priority_eps
        self._rng = np.random.default_rng(seed)
        self._items: list = []
        self._priorities = np.zeros(capacity)
        self._write = 0
        self.insertion_count = 0

    def __len__(self) -> int:
        return len(self._items)

    @property
    def max_priority(self) -> float:
        if not self._items:
            return 1.0
        return float(self._priorities[: len(self._items)].max())

    def insert(self, item, priority: float | None = None) -> int:
        """New items default to the current max priority (1.0 when empty) so
        they are seen at least once before their TD error is known."""
        if priority is None:
            priority = self.max_priority
        if priority < 0:
            raise ValueError("priority must be >= 0")
        slot = self._write
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[slot] = item
        self._priorities[slot] = priority
        self._write = (self._write + 1) % self.capacity
        self.insertion_count += 1
        return slot

    def _probabilities(self) -> np.ndarray:
        p = (self._priorities[: len(self._items)] + self.priority_eps) ** self.alpha
        return p / p.sum()

    def sample(self, k: int):
        """k independent draws (with replacement); returns (slots, items)."""
        if not self._items:
            raise BufferEmpty("replay buffer is empty")
        slots = self._rng.choice(len(self._items), size=k,
                                 p=self._probabilities())
        return slots, [self._items[i] for i in slots]

    def update_priorities(self, slots, priorities) -> None:
        for slot, p in zip(slots, priorities):
            self._priorities[slot] = max(0.0, float(p))


class ReplayOptimizer(PolicyOptimizer):
    """DQN-style strategy: evaluators publish fresh batches to the store;
    the driver inserts them into its embedded buffer, then draws prioritized
    minibatches, applies gradients locally, and writes back TD-error
    priorities."""

    def __init__(self, graph, evaluators, ctx, sgd_stepsize: float = 0.05,
                 buffer_capacity: int = 10_000, alpha: float = 0.6,
                 train_batch_size: int = 64, rounds_per_step: int = 4,
                 seed: int = 0):
        if not evaluators:
            raise ValueError("replay optimizer needs evaluators")
        super().__init__(graph, evaluators, ctx)
        self.stepsize = sgd_stepsize
        self.buffer = ReplayBuffer(buffer_capacity, alpha=alpha, seed=seed)
        self.train_batch_size = train_batch_size
        self.rounds_per_step = rounds_per_step
        self.broadcast_weights()

    def insert_batch(self, batch: SampleBatch) -> None:
        for i in range(batch.row_count):
            self.buffer.insert(batch.row(i))

    def step(self) -> OptimizerStats:
        t_start = time.monotonic()
        futs = self.invoke_evaluators("sample_to_store")
        refs, dropped = self._timed(
            "sample", lambda: gather_surviving(self.ctx, futs))
        self.stats.dropped_task_count += dropped
        for ref in refs:
            batch = ensure_batch(self.ctx.fetch(ref))
            self.insert_batch(batch)
            self.stats.samples_collected += batch.row_count
        if not len(self.buffer):
            raise BufferEmpty("nothing to train on after insertion")
        t_grad = time.monotonic()
        for _ in range(self.rounds_per_step):
            draw = min(self.train_batch_size, len(self.buffer))
            slots, rows = self.buffer.sample(draw)
            minibatch = SampleBatch.from_rows(rows)
            _, grads, td = self.graph.gradients_with_td(minibatch)
            self.graph.set_weights(tensor.sgd_step(self.graph.get_weights(),
                                                   grads, self.stepsize))
            self.buffer.update_priorities(slots, np.abs(td))
            self.stats.grad_steps_applied += 1
            self.stats.extras["priority_updates"] = (
                self.stats.extras.get("priority_updates", 0) + 1)
        self.stats.add_phase("grad", time.monotonic() - t_grad)
        self._timed("apply", self.broadcast_weights)
        self.stats.steps += 1
        self.stats.wall_time += time.monotonic() - t_start
        return self.stats
