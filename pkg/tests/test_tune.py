import csv

import numpy as np
import pytest

from rldist import tensor
from rldist.algorithms import TrainerConfig
from rldist.taskrt import Runtime, RuntimeConfig
from rldist.tune import (
    InvalidOverride,
    PopulationState,
    TrialSpec,
    TrialState,
    apply_overrides,
    grid_search,
    pbt_run,
    pbt_step,
    write_results_csv,
)


@pytest.fixture
def rt():
    runtime = Runtime(RuntimeConfig(slot_capacity=32))
    yield runtime
    runtime.shutdown()


def base_config(**kw):
    cfg = TrainerConfig(algorithm="pg", env="gridworld", num_evaluators=1,
                        batch_size=16, seed=0)
    d = cfg.to_dict()
    d.update(kw)
    return d


# ----------------------------------------------------------------- overrides

def test_apply_overrides_dotted_paths():
    out = apply_overrides(base_config(), {"optimizer.stepsize": 0.5,
                                          "graph.gamma": 0.9,
                                          "seed": 3})
    assert out["optimizer"]["stepsize"] == 0.5
    assert out["graph"]["gamma"] == 0.9
    assert out["seed"] == 3


def test_apply_overrides_rejects_unknown_keys():
    with pytest.raises(InvalidOverride):
        apply_overrides(base_config(), {"not_a_key": 1})
    with pytest.raises(InvalidOverride):
        apply_overrides(base_config(), {"seed.nested": 1})


# ---------------------------------------------------------------- grid search

def test_single_spec_equals_plain_run(rt):
    results = grid_search(rt, [TrialSpec("only", base_config())], iterations=2)
    assert len(results) == 1
    assert results[0].status == "done"
    assert len(results[0].history) == 2


def test_grid_search_ranks_and_hierarchy(rt):
    specs = [
        TrialSpec(f"t{i}", base_config(),
                  {"optimizer.stepsize": s})
        for i, s in enumerate([0.005, 0.02, 0.05, 0.1])
    ]
    results = grid_search(rt, specs, iterations=2)
    assert len(results) == 4
    scores = [r.score for r in results if r.status == "done"]
    # ranked by final episode_reward_mean, descending (None sinks)
    numeric = [s for s in scores if s is not None]
    assert numeric == sorted(numeric, reverse=True)
    # trial actors spawned their own evaluators: depth-3 actor tree
    assert rt.hierarchy_depth() >= 3


def test_failing_trial_recorded_and_search_continues(rt):
    specs = [
        TrialSpec("good", base_config()),
        TrialSpec("bad", base_config(), {"graph.gamma": 1.5}),
    ]
    results = grid_search(rt, specs, iterations=1)
    by_id = {r.trial_id: r for r in results}
    assert by_id["good"].status == "done"
    assert by_id["bad"].status == "failed"
    assert "gamma" in by_id["bad"].error
    # failed trials rank last
    assert results[-1].trial_id == "bad"


def test_results_csv(rt, tmp_path):
    results = grid_search(
        rt, [TrialSpec("a", base_config(), {"optimizer.stepsize": 0.01})],
        iterations=1)
    path = tmp_path / "results.csv"
    write_results_csv(str(path), results)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["trial_id", "score", "hyperparameters"]
    assert rows[1][0] == "a"
    assert "optimizer.stepsize=0.01" in rows[1][2]


# ----------------------------------------------------------------------- pbt

def make_population(scores):
    return PopulationState([
        TrialState(f"t{i}", s, weights=f"w{i}", hypers={"stepsize": 0.1})
        for i, s in enumerate(scores)
    ])


def test_pbt_step_copies_bottom_from_top():
    state, moves = pbt_step(make_population([1.0, 2.0, 3.0, 4.0]),
                            exploit_fraction=0.25,
                            rng=np.random.default_rng(0))
    assert len(moves) == 1
    move = moves[0]
    assert move.dst == "t0" and move.src == "t3"
    copied = next(t for t in state.trials if t.trial_id == "t0")
    assert copied.weights == "w3"
    assert move.factors["stepsize"] in (0.8, 1.2)
    assert copied.hypers["stepsize"] == pytest.approx(
        0.1 * move.factors["stepsize"])
    assert len(state.trials) == 4  # population size constant


def test_pbt_step_requires_population_of_four():
    with pytest.raises(ValueError):
        pbt_step(make_population([1.0, 2.0, 3.0]))


def test_pbt_scripted_landscape_best_non_decreasing():
    """Scripted score landscape: score improves as stepsize approaches 0.1;
    exploitation moves the population toward it, so the best never drops."""

    def score_of(hypers):
        return -abs(np.log10(hypers["stepsize"] / 0.1))

    hypers = [{"stepsize": s} for s in (0.001, 0.004, 0.02, 0.08)]
    rng = np.random.default_rng(7)
    bests = []
    state = PopulationState([
        TrialState(f"t{i}", score_of(h), weights=i, hypers=dict(h))
        for i, h in enumerate(hypers)
    ])
    for _ in range(5):
        for t in state.trials:
            t.score = score_of(t.hypers)
        bests.append(max(t.score for t in state.trials))
        state, _ = pbt_step(state, 0.25, (0.8, 1.2), rng)
    assert bests == sorted(bests)


def test_pbt_run_performs_verified_copy(rt):
    base = base_config(batch_size=12)
    state, history, copy_log = pbt_run(
        rt, base,
        hyper_choices=[{"stepsize": s} for s in (0.001, 0.01, 0.05, 0.1)],
        generations=2, iters_per_generation=1, eval_episodes=1, seed=3)
    assert len(history) == 2
    assert len(copy_log) >= 1
    assert rt.hierarchy_depth() >= 3
    # verified exploit/explore: destination's hypers = source's * factor
    move = copy_log[0]
    assert move.factors["stepsize"] in (0.8, 1.2)
