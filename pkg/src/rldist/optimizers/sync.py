"""Synchronous strategies: gradient-averaging over evaluator replicas, and
the local multi-pass optimizer that pools batches on the driver for several
SGD epochs (the strategy that deliberately moves batch payloads driver-side).
"""

from __future__ import annotations

import time

import numpy as np

from .. import tensor
from ..sample_batch import SampleBatch
from .base import (
    OptimizerStats,
    OutOfMemoryBudget,
    PolicyOptimizer,
    gather_surviving,
)


class SyncOptimizer(PolicyOptimizer):
    """Broadcast weights; sample and differentiate on every evaluator in
    parallel; apply one SGD step with the arithmetic-mean gradient."""

    def __init__(self, graph, evaluators, ctx, sgd_stepsize: float = 0.01,
                 keep_fraction: float = 1.0, gather_timeout: float | None = None):
        if not evaluators:
            raise ValueError("sync optimizer needs at least one evaluator")
        super().__init__(graph, evaluators, ctx)
        self.stepsize = sgd_stepsize
        self.keep_fraction = keep_fraction
        self.gather_timeout = gather_timeout
        self.broadcast_weights()

    def step(self) -> OptimizerStats:
        t_start = time.monotonic()
        futs = self.invoke_evaluators("sample_and_grad")
        results, dropped = self._timed(
            "sample", lambda: gather_surviving(
                self.ctx, futs, self.keep_fraction, self.gather_timeout))
        grads = tensor.mean_grads([g for g, _ in results])
        self.graph.set_weights(tensor.sgd_step(self.graph.get_weights(),
                                               grads, self.stepsize))
        self._timed("apply", self.broadcast_weights)
        self.stats.grad_steps_applied += 1
        self.stats.dropped_task_count += dropped
        self.stats.samples_collected += sum(info["rows"] for _, info in results)
        self.stats.steps += 1
        self.stats.wall_time += time.monotonic() - t_start
        self.stats.extras["last_infos"] = [info for _, info in results]
        return self.stats


class LocalMultipassOptimizer(PolicyOptimizer):
    """Gather one pooled batch to the driver, run several epochs of
    minibatch updates locally, broadcast the new weights once at the end."""

    def __init__(self, graph, evaluators, ctx, stepsize: float = 3e-4,
                 epochs: int = 20, minibatch_size: int = 512,
                 update: str = "sgd", byte_budget: int = 256 * 1024 * 1024,
                 seed: int = 0):
        if epochs < 1:
            raise ValueError("epochs must be >= 1")
        if update not in ("sgd", "adam"):
            raise ValueError(f"unknown update rule {update!r}")
        super().__init__(graph, evaluators, ctx)
        self.stepsize = stepsize
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.update = update
        self.byte_budget = byte_budget
        self._rng = np.random.default_rng(seed)
        self._adam = tensor.init_adam(graph.get_weights())
        self.broadcast_weights()

    def _apply(self, grads) -> None:
        params = self.graph.get_weights()
        if self.update == "adam":
            params, self._adam = tensor.adam_step(params, grads, self._adam,
                                                  self.stepsize)
        else:
            params = tensor.sgd_step(params, grads, self.stepsize)
        self.graph.set_weights(params)

    def step(self) -> OptimizerStats:
        t_start = time.monotonic()
        futs = self.invoke_evaluators("sample")
        batches, dropped = self._timed(
            "sample", lambda: gather_surviving(self.ctx, futs))
        pool = SampleBatch.concat(batches)
        if pool.nbytes > self.byte_budget:
            raise OutOfMemoryBudget(
                f"pooled batch is {pool.nbytes} bytes; budget {self.byte_budget}")
        rows = pool.row_count
        mb = min(self.minibatch_size, rows)
        t_grad = time.monotonic()
        for _ in range(self.epochs):
            order = self._rng.permutation(rows)
            for lo in range(0, rows, mb):
                minibatch = pool.slice_rows(order[lo:lo + mb])
                _, grads = self.graph.gradients(minibatch)
                self._apply(grads)
                self.stats.grad_steps_applied += 1
        self.stats.add_phase("grad", time.monotonic() - t_grad)
        self._timed("apply", self.broadcast_weights)
        self.stats.samples_collected += rows
        self.stats.dropped_task_count += dropped
        self.stats.steps += 1
        self.stats.wall_time += time.monotonic() - t_start
        return self.stats
