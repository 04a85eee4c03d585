"""Evolution strategies: antithetic Gaussian perturbations of the flattened
weights, centered-rank fitness shaping, the (1/(n*sigma)) * sum(F_i eps_i)
gradient estimate, and an Adam update with L2.

The trainer evaluates perturbation pairs on evaluator actors and, past four
evaluators, funnels results through an aggregation tree of intermediate
actors so the driver only ever collects a handful of combined replies.
"""

from __future__ import annotations

import time

import numpy as np

from .. import tensor
from ..envs import ContinuousSpace, make_env
from ..evaluation import EvaluatorConfig, PolicyEvaluator
from ..taskrt import BoxedRef, current_context
from .trainer import IterationResult, Trainer


def centered_ranks(values: np.ndarray) -> np.ndarray:
    """Rank transform into [-0.5, 0.5]; the output sums to zero."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 1:
        return np.zeros_like(values, dtype=np.float64)
    ranks = np.empty(flat.size, dtype=np.float64)
    ranks[flat.argsort(kind="stable")] = np.arange(flat.size)
    ranks = ranks / (flat.size - 1) - 0.5
    return ranks.reshape(np.shape(values))


def noise_for(seed: int, dim: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=dim)


def es_gradient_estimate(fitness_pairs, noise_seeds, dim: int, sigma: float,
                         rank_normalize: bool = True) -> np.ndarray:
    """g = (1/(n*sigma)) * sum_i F_i eps_i over n = 2*pairs antithetic
    perturbations; with shaping, F is the centered-rank transform of the
    raw returns."""
    pairs = np.asarray(fitness_pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("fitness_pairs must be (pairs, 2)")
    shaped = centered_ranks(pairs) if rank_normalize else pairs
    pair_weights = shaped[:, 0] - shaped[:, 1]
    total = np.zeros(dim)
    for w, seed in zip(pair_weights, noise_seeds):
        total += w * noise_for(int(seed), dim)
    n = 2 * len(noise_seeds)
    return total / (n * sigma)


class FlatAdamOptimizer:
    """Adam over a flat vector, reusing the kernel update via a single
    bias-free layer."""

    def __init__(self, dim: int, stepsize: float = 0.01,
                 l2_coeff: float = 0.005):
        self.stepsize = stepsize
        self.l2_coeff = l2_coeff
        self._template = tensor.MlpParams(
            (tensor.Layer(np.zeros((1, dim)), np.zeros(0)),))
        self._state = tensor.init_adam(self._template)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        params = tensor.MlpParams(
            (tensor.Layer(theta.reshape(1, -1).copy(), np.zeros(0)),))
        grads = (tensor.Layer(grad.reshape(1, -1), np.zeros(0)),)
        new_params, self._state = tensor.adam_step(
            params, grads, self._state, self.stepsize, l2_coeff=self.l2_coeff)
        return new_params.layers[0].w.ravel()


def es_minimize(objective, theta0: np.ndarray, steps: int, pairs: int = 100,
                sigma: float = 0.02, stepsize: float = 0.01,
                l2_coeff: float = 0.005, seed: int = 0,
                rank_normalize: bool = True):
    """Derivative-free minimization of a black-box objective with the same
    estimator and update the distributed trainer uses. Returns the final
    point and the objective trajectory."""
    theta = np.asarray(theta0, dtype=np.float64).copy()
    adam = FlatAdamOptimizer(theta.size, stepsize, l2_coeff)
    rng = np.random.default_rng(seed)
    history = [float(objective(theta))]
    for _ in range(steps):
        seeds = rng.integers(0, 2**31 - 1, size=pairs)
        fitness = np.empty((pairs, 2))
        for i, s in enumerate(seeds):
            eps = noise_for(int(s), theta.size)
            fitness[i, 0] = -objective(theta + sigma * eps)
            fitness[i, 1] = -objective(theta - sigma * eps)
        g = es_gradient_estimate(fitness, seeds, theta.size, sigma,
                                 rank_normalize)
        theta = adam.step(theta, -g)  # ascend the fitness estimate
        history.append(float(objective(theta)))
    return theta, history


class PerturbationAggregator:
    """Intermediate actor of the aggregation tree. It spawns its own group
    of evaluator children (hierarchical delegation), fans perturbation
    evaluations out to them, and returns one combined list so the driver
    collects a handful of replies instead of hundreds."""

    def __init__(self, graph_kind: str, graph_config: dict, env_name: str,
                 evaluator_configs: list, base_index: int):
        self.ctx = current_context()
        self.evaluators = [
            self.ctx.spawn_actor(
                (PolicyEvaluator,
                 (graph_kind, graph_config, env_name, cfg, base_index + i)))
            for i, cfg in enumerate(evaluator_configs)
        ]

    def get_evaluators(self) -> list:
        return self.evaluators

    def evaluate(self, boxed_theta: BoxedRef, noise_seeds, sigma: float,
                 episodes: int, eval_seed: int):
        futs = []
        for i, ns in enumerate(noise_seeds):
            ev = self.evaluators[i % len(self.evaluators)]
            futs.append(self.ctx.invoke(
                ev, "es_fitness_pair",
                [boxed_theta.ref, int(ns), sigma, episodes, eval_seed]))
        return [self.ctx.get(f) for f in futs]


class ESTrainer(Trainer):
    """Derivative-free trainer: no gradients anywhere near the policy; the
    optimizer abstraction is an estimator plus Adam on the driver."""

    graph_kind = "continuous"

    def __init__(self, config, ctx):
        probe = make_env(config.env, seed=0, **config.env_options)
        if not isinstance(probe.spec().action_space, ContinuousSpace):
            self.graph_kind = "pg"
        opt = config.optimizer
        self.sigma = float(opt.get("sigma", 0.02))
        self.pairs = int(opt.get("pairs", 100))  # n = 2 * pairs perturbations
        self.episodes_per_fitness = int(opt.get("episodes_per_fitness", 1))
        self.stepsize = float(opt.get("stepsize", 0.01))
        self.l2_coeff = float(opt.get("l2_coeff", 0.005))
        self.rank_normalize = bool(opt.get("rank_normalize", True))
        self.aggregator_fanout = int(opt.get("aggregators", 4))
        self.aggregators = []
        super().__init__(config, ctx)
        self._rng = np.random.default_rng(config.seed)
        dim = tensor.flatten_params(self.graph.get_weights()).size
        self._adam = FlatAdamOptimizer(dim, self.stepsize, self.l2_coeff)

    def _spawn_evaluators(self) -> list:
        """Past four evaluators, delegate spawning to intermediate
        aggregator actors: driver -> aggregator -> evaluator."""
        n = self.config.num_evaluators
        if n <= 4:
            return super()._spawn_evaluators()
        configs = [
            EvaluatorConfig(
                batch_size=self.config.batch_size,
                mode=self.config.sample_mode,
                num_parallel_envs=self.config.num_parallel_envs,
                seed=self.config.seed * 10_000 + i + 1,
                env_options=dict(self.config.env_options),
            )
            for i in range(n)
        ]
        groups = [configs[i::self.aggregator_fanout]
                  for i in range(self.aggregator_fanout)]
        evaluators = []
        for g, group in enumerate(gr for gr in groups if gr):
            agg = self.ctx.spawn_actor(
                (PerturbationAggregator,
                 (self.graph_kind, dict(self.config.graph), self.config.env,
                  group, g * 100)))
            self.aggregators.append(agg)
            evaluators.extend(self.ctx.get(
                self.ctx.invoke(agg, "get_evaluators")))
        return evaluators

    def _build_optimizer(self):
        return _NullOptimizer(self.graph, self.evaluators, self.ctx)

    def train(self) -> IterationResult:
        t0 = time.monotonic()
        theta = tensor.flatten_params(self.graph.get_weights())
        theta_ref = self.ctx.put(theta)
        seeds = self._rng.integers(0, 2**31 - 1, size=self.pairs)
        eval_seed = int(self._rng.integers(0, 2**31 - 1))
        targets = self.aggregators or self.evaluators
        chunks = [seeds[i::len(targets)] for i in range(len(targets))]
        futs = []
        for target, chunk in zip(targets, chunks):
            if not len(chunk):
                continue
            if self.aggregators:
                futs.append(self.ctx.invoke(
                    target, "evaluate",
                    [BoxedRef(theta_ref), chunk.tolist(), self.sigma,
                     self.episodes_per_fitness, eval_seed]))
            else:
                futs.append(self.ctx.invoke(
                    target, "es_fitness_seeds",
                    [theta_ref, chunk.tolist(), self.sigma,
                     self.episodes_per_fitness, eval_seed]))
        ordered_seeds, fitness = [], []
        for chunk, fut in zip([c for c in chunks if len(c)], futs):
            results = self.ctx.get(fut)
            ordered_seeds.extend(int(s) for s in chunk)
            fitness.extend(results)
        fitness = np.asarray(fitness, dtype=np.float64)
        grad = es_gradient_estimate(fitness, ordered_seeds, theta.size,
                                    self.sigma, self.rank_normalize)
        theta = self._adam.step(theta, -grad)
        self.graph.set_weights(
            tensor.unflatten_params(self.graph.get_weights(), theta))
        self.optimizer.broadcast_weights()
        self.iteration += 1
        episodes = fitness.size * self.episodes_per_fitness
        self.episodes_total += episodes
        self.timesteps_total += episodes  # env steps tracked per episode below
        mean_fitness = float(fitness.mean())
        self._rewards.append(mean_fitness)
        return IterationResult(
            iteration=self.iteration,
            episode_reward_mean=mean_fitness,
            episodes_total=self.episodes_total,
            timesteps_total=self.timesteps_total,
            optimizer_stats=self.optimizer.stats.to_dict(),
            wall_time=time.monotonic() - t0,
            custom={"fitness_best": float(fitness.max()),
                    "perturbations": int(fitness.size)},
        )

    def close(self) -> None:
        super().close()
        for agg in self.aggregators:
            try:
                self.ctx.terminate_actor(agg)
            except Exception:
                pass


class _NullOptimizer:
    """ES performs its own update; this satisfies the optimizer slot of the
    trainer contract (stats, broadcast)."""

    def __init__(self, graph, evaluators, ctx):
        from ..optimizers import PolicyOptimizer

        self._inner = PolicyOptimizer(graph, evaluators, ctx)
        self.stats = self._inner.stats
        self.stepsize = None

    def broadcast_weights(self):
        self._inner.broadcast_weights()

    def step(self):
        raise NotImplementedError("the ES trainer drives its own update")

    def close(self):
        pass
