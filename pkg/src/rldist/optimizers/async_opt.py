"""Asynchronous strategy: gradients computed on evaluators from snapshots of
the weights, applied serially at the driver with a bounded in-flight window.

Results are consumed in submission order, which keeps runs reproducible
while still overlapping gradient computation across evaluators; the window
bound caps how stale any applied gradient can be.
"""

from __future__ import annotations

import time
from collections import deque

from .. import tensor
from ..taskrt import ActorUnavailable, MethodError
from .base import AllEvaluatorsFailed, OptimizerStats, PolicyOptimizer


class AsyncOptimizer(PolicyOptimizer):
    def __init__(self, graph, evaluators, ctx, sgd_stepsize: float = 0.01,
                 grads_to_apply: int = 1, max_in_flight: int = 2):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if not evaluators:
            raise ValueError("async optimizer needs at least one evaluator")
        super().__init__(graph, evaluators, ctx)
        self.stepsize = sgd_stepsize
        self.grads_to_apply = grads_to_apply
        self.max_in_flight = max_in_flight
        self._rr = 0

    def _submit(self, pool: list, inflight: deque, version: int) -> None:
        while pool:
            ev = pool[self._rr % len(pool)]
            self._rr += 1
            ref = self.ctx.put(self.graph.get_weights())
            try:
                fut = self.ctx.invoke(ev, "grad_on_weights", [ref])
            except ActorUnavailable:
                pool.remove(ev)
                self.stats.dropped_task_count += 1
                continue
            inflight.append((fut, version, ev))
            return

    def step(self) -> OptimizerStats:
        t_start = time.monotonic()
        target = self.grads_to_apply
        applied = 0
        audit: list[tuple[int, int]] = []  # (version applied at, version computed from)
        pool = list(self.evaluators)
        inflight: deque = deque()
        while applied < target:
            while (len(inflight) < self.max_in_flight
                   and applied + len(inflight) < target and pool):
                self._submit(pool, inflight, applied)
            if not inflight:
                raise AllEvaluatorsFailed("no evaluators left to compute gradients")
            fut, version, ev = inflight.popleft()
            try:
                grads, info = self.ctx.get(fut)
            except (ActorUnavailable, MethodError):
                self.stats.dropped_task_count += 1
                if ev in pool:
                    pool.remove(ev)
                if not pool and not inflight:
                    raise AllEvaluatorsFailed("every evaluator failed")
                continue
            self.graph.set_weights(tensor.sgd_step(self.graph.get_weights(),
                                                   grads, self.stepsize))
            audit.append((applied, version))
            applied += 1
            self.stats.grad_steps_applied += 1
            self.stats.samples_collected += info["rows"]
        self.stats.steps += 1
        self.stats.wall_time += time.monotonic() - t_start
        self.stats.extras["staleness_audit"] = audit
        self.stats.extras["max_staleness"] = max(
            (a - v for a, v in audit), default=0)
        return self.stats
