"""Nested hyperparameter search over trainers: parallel grid search and a
minimal synchronous population-based training loop.

Trials are trainer actors (each spawning its own evaluator actors), so a
search is a depth-3 hierarchy driven entirely through the generic trainer
surface; no trainer code changes, no control points inserted.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from .algorithms import TrainerActor, TrainerConfig
from .taskrt import ActorUnavailable, MethodError


class InvalidOverride(Exception):
    pass


@dataclass
class TrialSpec:
    trial_id: str
    base: dict
    overrides: dict = field(default_factory=dict)

    def resolved_config(self) -> dict:
        return apply_overrides(self.base, self.overrides)


def apply_overrides(base: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides ('optimizer.stepsize') to a config dict;
    unknown paths are rejected."""
    out = copy.deepcopy(base)
    valid_top = set(TrainerConfig().to_dict())
    for key, value in overrides.items():
        parts = key.split(".")
        if parts[0] not in valid_top:
            raise InvalidOverride(f"override {key!r} names no config key")
        node = out
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                if part in ("graph", "optimizer", "env_options"):
                    node[part] = node.get(part) or {}
                else:
                    raise InvalidOverride(f"override {key!r} names no config key")
            node = node[part]
        node[parts[-1]] = value
    return out


@dataclass
class TrialResult:
    trial_id: str
    status: str              # "done" | "failed"
    score: float | None
    overrides: dict
    history: list = field(default_factory=list)
    error: str = ""


def grid_search(ctx, specs: list[TrialSpec], iterations: int) -> list[TrialResult]:
    """Run every trial as a nested trainer actor, in parallel; rank by final
    episode_reward_mean (ties by trial_id). Failed trials are recorded and
    ranked last; the search continues."""
    if not specs:
        raise ValueError("grid_search needs at least one trial spec")
    actors, results = {}, {}
    for spec in specs:
        config = spec.resolved_config()
        violations = TrainerConfig.from_dict(config).validate()
        if violations:
            results[spec.trial_id] = TrialResult(
                spec.trial_id, "failed", None, spec.overrides,
                error="; ".join(violations))
            continue
        actors[spec.trial_id] = ctx.spawn_actor((TrainerActor, (config,)))
    futs = {tid: ctx.invoke(actor, "train_k", [iterations])
            for tid, actor in actors.items()}
    for spec in specs:
        tid = spec.trial_id
        if tid not in futs:
            continue
        try:
            history = ctx.get(futs[tid])
            score = history[-1]["episode_reward_mean"]
            results[tid] = TrialResult(tid, "done", score, spec.overrides,
                                       history)
        except (ActorUnavailable, MethodError) as exc:
            results[tid] = TrialResult(tid, "failed", None, spec.overrides,
                                       error=str(exc))
    for tid, actor in actors.items():
        try:
            ctx.terminate_actor(actor)
        except Exception:
            pass

    def rank_key(r: TrialResult):
        failed = r.status != "done"
        unscored = r.score is None
        return (failed, unscored, -(r.score if r.score is not None else 0.0),
                r.trial_id)

    return sorted(results.values(), key=rank_key)


def write_results_csv(path: str, results: list[TrialResult]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial_id", "score", "hyperparameters"])
        for r in results:
            hypers = ";".join(f"{k}={v}" for k, v in sorted(r.overrides.items()))
            writer.writerow([r.trial_id, "" if r.score is None else r.score,
                             hypers])


# -- population based training ---------------------------------------------------

@dataclass
class TrialState:
    trial_id: str
    score: float
    weights: object
    hypers: dict


@dataclass
class PopulationState:
    trials: list[TrialState]
    generation: int = 0


@dataclass
class ExploitMove:
    dst: str
    src: str
    factors: dict


def pbt_step(state: PopulationState, exploit_fraction: float = 0.25,
             perturb_factors: tuple = (0.8, 1.2),
             rng: np.random.Generator | None = None):
    """Bottom performers copy weights and hyperparameters from uniformly
    chosen top performers, then perturb each copied numeric hyperparameter
    by a factor drawn from perturb_factors. Population size is unchanged."""
    if len(state.trials) < 4:
        raise ValueError("population based training needs >= 4 trials")
    rng = rng or np.random.default_rng(0)
    q = max(1, int(len(state.trials) * exploit_fraction))
    ranked = sorted(state.trials, key=lambda t: t.score)
    bottom, top = ranked[:q], ranked[-q:]
    moves = []
    new_trials = {t.trial_id: t for t in state.trials}
    for loser in bottom:
        src = top[int(rng.integers(0, len(top)))]
        factors = {}
        hypers = {}
        for key, value in src.hypers.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                factor = float(perturb_factors[
                    int(rng.integers(0, len(perturb_factors)))])
                factors[key] = factor
                hypers[key] = value * factor
            else:
                hypers[key] = value
        new_trials[loser.trial_id] = TrialState(
            loser.trial_id, src.score, src.weights, hypers)
        moves.append(ExploitMove(loser.trial_id, src.trial_id, factors))
    return (PopulationState(list(new_trials.values()), state.generation + 1),
            moves)


def pbt_run(ctx, base_config: dict, hyper_choices: list[dict],
            generations: int, iters_per_generation: int,
            exploit_fraction: float = 0.25,
            perturb_factors: tuple = (0.8, 1.2),
            eval_episodes: int = 3, seed: int = 0):
    """Synchronous PBT over trainer actors. Returns (final PopulationState,
    per-generation history, verified copy log)."""
    if len(hyper_choices) < 4:
        raise ValueError("population based training needs >= 4 trials")
    rng = np.random.default_rng(seed)
    actors, hypers = {}, {}
    for i, choice in enumerate(hyper_choices):
        tid = f"trial_{i}"
        config = copy.deepcopy(base_config)
        config["seed"] = base_config.get("seed", 0) * 100 + i
        actors[tid] = ctx.spawn_actor((TrainerActor, (config,)))
        hypers[tid] = dict(choice)
    for tid, actor in actors.items():
        ctx.get(ctx.invoke(actor, "apply_hyperparams", [hypers[tid]]))

    history, copy_log = [], []
    state = None
    for gen in range(generations):
        futs = {tid: ctx.invoke(a, "train_k", [iters_per_generation])
                for tid, a in actors.items()}
        for tid in actors:
            ctx.get(futs[tid])
        eval_seed = int(rng.integers(0, 2**31 - 1))
        score_futs = {tid: ctx.invoke(a, "evaluate", [eval_episodes, eval_seed])
                      for tid, a in actors.items()}
        scores = {tid: float(ctx.get(f)) for tid, f in score_futs.items()}
        weight_futs = {tid: ctx.invoke(a, "get_weights")
                       for tid, a in actors.items()}
        trials = [TrialState(tid, scores[tid], ctx.get(weight_futs[tid]),
                             dict(hypers[tid])) for tid in sorted(actors)]
        state = PopulationState(trials, gen)
        state, moves = pbt_step(state, exploit_fraction, perturb_factors, rng)
        for move in moves:
            trial = next(t for t in state.trials if t.trial_id == move.dst)
            ctx.get(ctx.invoke(actors[move.dst], "set_weights",
                               [ctx.put(trial.weights)]))
            ctx.get(ctx.invoke(actors[move.dst], "apply_hyperparams",
                               [trial.hypers]))
            hypers[move.dst] = dict(trial.hypers)
            copy_log.append(move)
        history.append({
            "generation": gen,
            "scores": scores,
            "best": max(scores.values()),
            "moves": [(m.dst, m.src) for m in moves],
        })
    for actor in actors.values():
        try:
            ctx.terminate_actor(actor)
        except Exception:
            pass
    return state, history, copy_log
