"""Shared helpers for optimizer tests: spawn evaluator actors and build the
matching in-process oracles."""

import numpy as np

from rldist import tensor
from rldist.envs import make_env
from rldist.evaluation import EvaluatorConfig, PolicyEvaluator
from rldist.policy import make_graph
from rldist.taskrt import ResourceClaim


def evaluator_factory(seed, graph="pg", env="gridworld", batch_size=32,
                      graph_config=None, index=0, **cfg_kw):
    cfg = EvaluatorConfig(batch_size=batch_size, seed=seed, **cfg_kw)
    return (PolicyEvaluator, (graph, graph_config or {}, env, cfg, index))


def spawn_evaluators(rt, n, graph="pg", env="gridworld", batch_size=32,
                     graph_config=None, base_seed=1, **cfg_kw):
    return [
        rt.spawn_actor(evaluator_factory(base_seed + i, graph, env, batch_size,
                                         graph_config, index=i, **cfg_kw))
        for i in range(n)
    ]


def local_evaluator(seed, graph="pg", env="gridworld", batch_size=32,
                    graph_config=None, index=0, **cfg_kw):
    cls, args = evaluator_factory(seed, graph, env, batch_size, graph_config,
                                  index, **cfg_kw)
    return cls(*args)


def local_graph(graph="pg", env="gridworld", graph_config=None, seed=0):
    probe = make_env(env, seed=0)
    spec = probe.spec()
    return make_graph(graph, spec.obs_dim, spec.action_space,
                      graph_config or {}, seed=seed)


def params_close(a, b, atol):
    fa, fb = tensor.flatten_params(a), tensor.flatten_params(b)
    return np.abs(fa - fb).max() <= atol


def max_param_diff(a, b):
    return float(np.abs(tensor.flatten_params(a) - tensor.flatten_params(b)).max())
