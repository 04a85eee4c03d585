"""Sharded parameter-server strategy: the flattened weight vector is split
into contiguous slices held by shard actors; evaluators push whole flat
gradients (via the object store) and each shard applies its slice serially
in arrival order. Pulls for shard k+1 are issued while shard k's pushes are
still outstanding (double-buffered pulls)."""

from __future__ import annotations

import time

import numpy as np

from .. import tensor
from ..taskrt import ActorUnavailable, MethodError, current_context
from .base import OptimizerStats, PolicyOptimizer, ShardUnavailable


def shard_bounds(total: int, num_shards: int) -> list[tuple[int, int]]:
    """Contiguous equal slices; the last shard takes the remainder."""
    if num_shards < 1:
        raise ValueError("need at least one shard")
    if total < num_shards:
        raise ValueError(f"cannot split {total} weights into {num_shards} shards")
    base = total // num_shards
    bounds = []
    for i in range(num_shards):
        lo = i * base
        hi = (i + 1) * base if i < num_shards - 1 else total
        bounds.append((lo, hi))
    return bounds


class ParamShardActor:
    """Holds one contiguous slice of the flattened weights."""

    def __init__(self, shard_index: int, lo: int, hi: int,
                 initial: np.ndarray, stepsize: float):
        self.shard_index = shard_index
        self.lo = lo
        self.hi = hi
        self.values = np.asarray(initial, dtype=np.float64).copy()
        self.stepsize = stepsize

    def push(self, flat_grad: np.ndarray) -> int:
        """Apply one SGD update to this slice; pushes land in mailbox
        (arrival) order."""
        self.values -= self.stepsize * np.asarray(flat_grad)[self.lo:self.hi]
        return self.shard_index

    def pull(self) -> np.ndarray:
        return self.values.copy()

    def pull_to_store(self):
        return current_context().put(self.values.copy())


class ParamServerOptimizer(PolicyOptimizer):
    def __init__(self, graph, evaluators, ctx, num_shards: int = 2,
                 sgd_stepsize: float = 0.01, rounds: int = 1):
        if not evaluators:
            raise ValueError("parameter-server optimizer needs evaluators")
        super().__init__(graph, evaluators, ctx)
        self.stepsize = sgd_stepsize
        self.rounds = rounds
        flat = tensor.flatten_params(graph.get_weights())
        self.bounds = shard_bounds(flat.size, num_shards)
        self.shards = []
        for i, (lo, hi) in enumerate(self.bounds):
            ref = ctx.spawn_actor((ParamShardActor,
                                   (i, lo, hi, flat[lo:hi], sgd_stepsize)))
            self.shards.append(ref)
        self.broadcast_weights()

    def _shard_call(self, shard, method, args=()):
        try:
            return self.ctx.invoke(shard, method, args)
        except ActorUnavailable as exc:
            raise ShardUnavailable(str(exc)) from exc

    def pull_flat(self) -> np.ndarray:
        """Reconstruct the full vector: shard concatenation in index order."""
        futs = [self._shard_call(s, "pull") for s in self.shards]
        try:
            slices = [self.ctx.get(f) for f in futs]
        except (ActorUnavailable, MethodError) as exc:
            raise ShardUnavailable(str(exc)) from exc
        return np.concatenate(slices)

    def step(self) -> OptimizerStats:
        t_start = time.monotonic()
        for _ in range(self.rounds):
            grad_futs = self.invoke_evaluators("sample_and_flat_grad_to_store")
            rows = 0
            push_futs = []
            pull_futs: list = [None] * len(self.shards)
            grad_refs = []
            for fut in grad_futs:
                try:
                    ref, info = self.ctx.get(fut)
                except (ActorUnavailable, MethodError):
                    self.stats.dropped_task_count += 1
                    continue
                grad_refs.append(ref)
                rows += info["rows"]
            # push shard k's updates, prefetching the pull of shard k-1
            # while later shards are still applying
            for k, shard in enumerate(self.shards):
                for ref in grad_refs:
                    push_futs.append(self._shard_call(shard, "push", [ref]))
                if k > 0:
                    pull_futs[k - 1] = self._shard_call(
                        self.shards[k - 1], "pull_to_store")
            pull_futs[-1] = self._shard_call(self.shards[-1], "pull_to_store")
            for f in push_futs:
                try:
                    self.ctx.get(f)
                except (ActorUnavailable, MethodError) as exc:
                    raise ShardUnavailable(str(exc)) from exc
            slice_refs = [self.ctx.get(f) for f in pull_futs]
            # evaluators reassemble from the same slice objects
            set_futs = [self.ctx.invoke(ev, "set_weights_from_slices",
                                        [slice_refs])
                        for ev in self.evaluators]
            flat = np.concatenate([self.ctx.fetch(r) for r in slice_refs])
            self.graph.set_weights(
                tensor.unflatten_params(self.graph.get_weights(), flat))
            for f in set_futs:
                self.ctx.get(f)
            self.stats.grad_steps_applied += len(grad_refs)
            self.stats.samples_collected += rows
        self.stats.steps += 1
        self.stats.wall_time += time.monotonic() - t_start
        return self.stats

    def close(self) -> None:
        for shard in self.shards:
            try:
                self.ctx.terminate_actor(shard)
            except Exception:
                pass
