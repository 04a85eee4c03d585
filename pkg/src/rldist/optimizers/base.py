"""Policy optimizer contract: step(local graph, evaluator actors) -> stats.

Every optimizer is constructible from the same (graph, evaluators, context)
triple and keeps cumulative counters, so strategies are interchangeable by
configuration alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..taskrt import ActorUnavailable, MethodError


class AllEvaluatorsFailed(Exception):
    pass


class OutOfMemoryBudget(Exception):
    pass


class BufferEmpty(Exception):
    pass


class ShardUnavailable(Exception):
    pass


@dataclass
class OptimizerStats:
    """Cumulative training statistics; counters are monotone across steps.

    Any key ending in ``_time`` is wall-clock derived and excluded from
    determinism comparisons.
    """

    samples_collected: int = 0
    grad_steps_applied: int = 0
    dropped_task_count: int = 0
    steps: int = 0
    wall_time: float = 0.0
    phase_times: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def add_phase(self, name: str, seconds: float) -> None:
        key = name if name.endswith("_time") else f"{name}_time"
        self.phase_times[key] = self.phase_times.get(key, 0.0) + seconds

    def to_dict(self) -> dict:
        out = {
            "samples_collected": self.samples_collected,
            "grad_steps_applied": self.grad_steps_applied,
            "dropped_task_count": self.dropped_task_count,
            "steps": self.steps,
            "wall_time": self.wall_time,
        }
        out.update(self.phase_times)
        out.update(self.extras)
        return out


class PolicyOptimizer:
    """Base of all execution strategies."""

    def __init__(self, graph, evaluators, ctx):
        self.graph = graph
        self.evaluators = list(evaluators)
        self.ctx = ctx
        self.stats = OptimizerStats()

    def step(self) -> OptimizerStats:
        raise NotImplementedError

    def foreach_policy(self, method: str, *args) -> list:
        """Call a graph method on the local graph and every evaluator's
        replica; returns results in [local, ev_1, ..., ev_n] order."""
        local = getattr(self.graph, method)(*args)
        futs = [self.ctx.invoke(ev, "call_graph", [method, *args])
                for ev in self.evaluators]
        return [local] + [self.ctx.get(f) for f in futs]

    def invoke_evaluators(self, method: str, args=()):
        """Invoke every reachable evaluator; unreachable ones count as
        dropped tasks rather than aborting the step."""
        futures = []
        for ev in self.evaluators:
            try:
                futures.append(self.ctx.invoke(ev, method, args))
            except ActorUnavailable:
                self.stats.dropped_task_count += 1
        if not futures:
            raise AllEvaluatorsFailed(
                f"no evaluator reachable for {method!r}")
        return futures

    def broadcast_weights(self) -> None:
        """One serialization into the store, one handle per evaluator."""
        ref = self.ctx.put(self.graph.get_weights())
        futures = []
        for ev in self.evaluators:
            try:
                futures.append(self.ctx.invoke(ev, "set_weights", [ref]))
            except ActorUnavailable:
                continue
        for f in futures:
            try:
                self.ctx.get(f)
            except (ActorUnavailable, MethodError):
                continue

    def close(self) -> None:
        pass

    def _timed(self, name: str, fn):
        t0 = time.monotonic()
        result = fn()
        self.stats.add_phase(name, time.monotonic() - t0)
        return result


def straggler_tolerant_gather(ctx, futures, keep_fraction: float,
                              timeout: float | None = None):
    """Wait for ceil(keep_fraction * n) results, drop the rest.

    Returns (results, dropped_count). Trades a little bias for a bound on
    tail latency; dropped tasks still run to completion but are ignored.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    futures = list(futures)
    k = -(-len(futures) * keep_fraction // 1)  # ceil
    k = int(min(len(futures), max(1, k)))
    ready, pending = ctx.wait(futures, k=k, timeout=timeout)
    results = [ctx.get(f) for f in ready]
    return results, len(pending)


def gather_surviving(ctx, futures, keep_fraction: float = 1.0,
                     timeout: float | None = None):
    """Gather results, tolerating failed evaluators: failures count toward
    the dropped tally; raises AllEvaluatorsFailed when nothing survives.

    Results come back in submission order (which futures made the cut is
    completion-order when keep_fraction < 1), so reductions over them are
    reproducible.
    """
    futures = list(futures)
    ready, pending = ctx.wait(futures, k=int(-(-len(futures) * keep_fraction // 1)),
                              timeout=timeout)
    ready_ids = {f.task_id for f in ready}
    results, dropped = [], len(pending)
    for fut in futures:
        if fut.task_id not in ready_ids:
            continue
        try:
            results.append(ctx.get(fut))
        except (ActorUnavailable, MethodError):
            dropped += 1
    if not results:
        raise AllEvaluatorsFailed(f"all {len(futures)} evaluator tasks failed")
    return results, dropped
