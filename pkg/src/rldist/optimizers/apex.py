"""High-throughput off-policy strategy: evaluators with a spread of
exploration rates keep sampling while the driver's learner computes
gradients, with replay shards held by dedicated actors.

Control flow is deterministic (round-robin, submission-order consumption);
concurrency comes from evaluator tasks executing while the learner runs,
which the timestamped task windows make measurable.
"""

from __future__ import annotations

import time

import numpy as np

from .. import tensor
from ..evaluation import ensure_batch
from ..sample_batch import SampleBatch
from ..taskrt import current_context
from .base import OptimizerStats, PolicyOptimizer
from .replay import ReplayBuffer


def apex_epsilons(n: int, base: float = 0.4, exponent: float = 7.0) -> list[float]:
    """Per-worker exploration rates: worker i of n gets
    base ** (1 + i/(n-1) * exponent); a single worker gets base."""
    if n < 1:
        raise ValueError("need at least one worker")
    if n == 1:
        return [base]
    return [base ** (1.0 + i / (n - 1) * exponent) for i in range(n)]


class ReplayActor:
    """Actor-held prioritized replay shard."""

    def __init__(self, capacity: int, alpha: float = 0.6, seed: int = 0):
        self.buffer = ReplayBuffer(capacity, alpha=alpha, seed=seed)

    def insert_batch(self, batch) -> int:
        batch = ensure_batch(batch)
        for i in range(batch.row_count):
            self.buffer.insert(batch.row(i))
        return batch.row_count

    def size(self) -> int:
        return len(self.buffer)

    def sample_minibatch_to_store(self, k: int):
        slots, rows = self.buffer.sample(k)
        ref = current_context().put(SampleBatch.from_rows(rows))
        return slots.tolist(), ref

    def update_priorities(self, slots, priorities) -> None:
        self.buffer.update_priorities(slots, priorities)


class ApexOptimizer(PolicyOptimizer):
    """step() runs `budget` learner gradient applications while sampling and
    replay insertion stay in flight on the actor side."""

    def __init__(self, graph, evaluators, ctx, replay_actors,
                 sgd_stepsize: float = 0.05, train_batch_size: int = 64,
                 broadcast_interval: int = 16, budget: int = 16):
        if not replay_actors:
            raise ValueError("need at least one replay actor")
        super().__init__(graph, evaluators, ctx)
        self.replay_actors = list(replay_actors)
        self.stepsize = sgd_stepsize
        self.train_batch_size = train_batch_size
        self.broadcast_interval = broadcast_interval
        self.budget = budget
        self.applications = 0
        self._sample_futs: list = [None] * len(self.evaluators)
        self._insert_rr = 0
        self._consume_rr = 0
        self._draw_rr = 0
        self.broadcast_weights()

    def _top_up(self) -> None:
        for i, ev in enumerate(self.evaluators):
            if self._sample_futs[i] is None:
                self._sample_futs[i] = self.ctx.invoke(ev, "sample_to_store")

    def _route_one_sample(self) -> None:
        """Consume the next evaluator's outstanding sample (round-robin),
        hand the reference to a replay actor, and resubmit the sampler."""
        i = self._consume_rr % len(self.evaluators)
        self._consume_rr += 1
        fut = self._sample_futs[i]
        ref = self.ctx.get(fut)
        if hasattr(self.ctx, "task_timing"):
            self.stats.extras.setdefault("sample_windows_time", []).append(
                self.ctx.task_timing(fut))
        replay = self.replay_actors[self._insert_rr % len(self.replay_actors)]
        self._insert_rr += 1
        rows = self.ctx.get(self.ctx.invoke(replay, "insert_batch", [ref]))
        self._sample_futs[i] = self.ctx.invoke(self.evaluators[i],
                                               "sample_to_store")
        self.stats.samples_collected += rows

    def step(self) -> OptimizerStats:
        t_start = time.monotonic()
        self._top_up()
        applied_this_step = 0
        while applied_this_step < self.budget:
            self._route_one_sample()
            replay = self.replay_actors[self._draw_rr % len(self.replay_actors)]
            self._draw_rr += 1
            size = self.ctx.get(self.ctx.invoke(replay, "size"))
            if size < self.train_batch_size:
                continue  # keep inserting until this shard can serve a draw
            slots, mref = self.ctx.get(self.ctx.invoke(
                replay, "sample_minibatch_to_store", [self.train_batch_size]))
            minibatch = self.ctx.fetch(mref)
            t0 = time.monotonic()
            _, grads, td = self.graph.gradients_with_td(minibatch)
            self.graph.set_weights(tensor.sgd_step(self.graph.get_weights(),
                                                   grads, self.stepsize))
            t1 = time.monotonic()
            self.stats.extras.setdefault("learner_windows_time", []).append(
                (t0, t1))
            self.ctx.invoke(replay, "update_priorities",
                            [slots, np.abs(td).tolist()])
            self.stats.extras["priority_updates"] = (
                self.stats.extras.get("priority_updates", 0) + 1)
            self.applications += 1
            applied_this_step += 1
            self.stats.grad_steps_applied += 1
            if (self.broadcast_interval > 0
                    and self.applications % self.broadcast_interval == 0):
                self.broadcast_weights()
        self.stats.steps += 1
        self.stats.wall_time += time.monotonic() - t_start
        return self.stats

    def overlap_fraction(self) -> float:
        """Fraction of learner compute time during which at least one
        evaluator sampling task was executing."""
        learner = self.stats.extras.get("learner_windows_time", [])
        samples = self.stats.extras.get("sample_windows_time", [])
        if not learner or not samples:
            return 0.0
        total = sum(b - a for a, b in learner)
        if total <= 0:
            return 0.0
        overlap = 0.0
        for la, lb in learner:
            for sa, sb in samples:
                overlap += max(0.0, min(lb, sb) - max(la, sa))
        return min(1.0, overlap / total)
