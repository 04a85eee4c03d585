import numpy as np
import pytest
from scipy import stats

from rldist import tensor
from rldist.envs import ContinuousSpace, DiscreteSpace
from rldist.policy import (
    BOOT_DISCOUNT,
    BOOT_OBS,
    NSTEP_REWARDS,
    CategoricalPGGraph,
    ContinuousPolicyGraph,
    DQNGraph,
    ExplorationSchedule,
    PPOGraph,
    SharedRewardPGGraph,
    dqn_loss,
    epsilon_at,
    pg_loss,
    ppo_clip_loss,
)
from rldist.sample_batch import MissingColumn, SampleBatch
from rldist.tensor import Layer, MlpParams


def max_rel_err(analytic, numeric):
    worst = 0.0
    for a, b in zip(analytic, numeric):
        for x, y in ((a.w, b.w), (a.b, b.b)):
            scale = max(np.abs(x).max(), np.abs(y).max(), 1e-8)
            worst = max(worst, np.abs(x - y).max() / scale)
    return worst


def make_pg_batch(rng, graph, rows=12):
    obs = rng.normal(size=(rows, graph.obs_dim))
    actions = rng.integers(0, graph.n_actions, rows)
    adv = rng.normal(size=rows)
    return SampleBatch({
        SampleBatch.OBS: obs,
        SampleBatch.ACTIONS: actions,
        SampleBatch.ADVANTAGES: adv,
    })


# ---------------------------------------------------------------- schedules

def test_epsilon_schedule_endpoints_and_midpoint():
    s = ExplorationSchedule(eps_start=1.0, eps_end=0.1, decay_steps=100)
    assert epsilon_at(s, 0) == 1.0
    assert epsilon_at(s, 100) == 0.1
    assert epsilon_at(s, 1000) == 0.1
    assert epsilon_at(s, 50) == pytest.approx((1.0 + 0.1) / 2)


# ---------------------------------------------------------------------- act

def test_zero_weight_greedy_tie_breaks_low_index():
    graph = CategoricalPGGraph(3, DiscreteSpace(4), seed=0)
    zero = MlpParams(tuple(Layer(np.zeros_like(l.w), np.zeros_like(l.b))
                           for l in graph.params.layers))
    graph.set_weights(zero)
    actions, h, aux = graph.act(np.ones((5, 3)), graph.empty_hidden(5),
                                explore=False)
    assert np.all(actions == 0)
    assert h.shape == (5, 0)
    # uniform logits: logp = log(1/4)
    assert np.allclose(aux[SampleBatch.LOGP], np.log(0.25))


def test_dqn_full_exploration_is_uniform():
    graph = DQNGraph(2, DiscreteSpace(4), {"epsilon_override": 1.0}, seed=1)
    obs = np.zeros((10_000, 2))
    actions, _, _ = graph.act(obs, graph.empty_hidden(10_000))
    counts = np.bincount(actions, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01


def test_stochastic_act_deterministic_given_seed():
    def sequence():
        graph = CategoricalPGGraph(3, DiscreteSpace(5), seed=9)
        obs = np.random.default_rng(0).normal(size=(50, 3))
        out = []
        for i in range(4):
            actions, _, _ = graph.act(obs, graph.empty_hidden(50))
            out.append(actions)
        return np.concatenate(out)

    assert np.array_equal(sequence(), sequence())


def test_weight_roundtrip_identity():
    graph = PPOGraph(4, DiscreteSpace(2), seed=3)
    obs = np.random.default_rng(1).normal(size=(6, 4))
    before, _, aux_before = graph.act(obs, graph.empty_hidden(6), explore=False)
    graph.set_weights(graph.get_weights())
    after, _, aux_after = graph.act(obs, graph.empty_hidden(6), explore=False)
    assert np.array_equal(before, after)
    assert np.array_equal(aux_before[SampleBatch.VF_PREDS],
                          aux_after[SampleBatch.VF_PREDS])


def test_greedy_invariant_under_per_row_offset():
    graph = CategoricalPGGraph(3, DiscreteSpace(4), seed=5)
    obs = np.random.default_rng(2).normal(size=(8, 3))
    base, _, _ = graph.act(obs, graph.empty_hidden(8), explore=False)
    layers = list(graph.params.layers)
    last = layers[-1]
    layers[-1] = Layer(last.w, last.b + 7.5)  # uniform offset to every logit
    graph.set_weights(MlpParams(tuple(layers)))
    shifted, _, _ = graph.act(obs, graph.empty_hidden(8), explore=False)
    assert np.array_equal(base, shifted)


def test_continuous_policy_respects_bounds():
    graph = ContinuousPolicyGraph(3, ContinuousSpace(1, -2.0, 2.0), seed=0)
    obs = np.random.default_rng(3).normal(scale=10, size=(20, 3))
    actions, _, _ = graph.act(obs, graph.empty_hidden(20))
    assert actions.shape == (20, 1)
    assert np.all(actions >= -2.0) and np.all(actions <= 2.0)


# ------------------------------------------------------------------- pg loss

def test_pg_loss_zero_advantages():
    graph = CategoricalPGGraph(3, DiscreteSpace(2), seed=0)
    batch = make_pg_batch(np.random.default_rng(0), graph)
    batch[SampleBatch.ADVANTAGES] = np.zeros(batch.row_count)
    loss, grads = pg_loss(graph.params, batch)
    assert loss == 0.0
    for g in grads:
        assert np.allclose(g.w, 0) and np.allclose(g.b, 0)


def test_pg_loss_uniform_policy_single_sample():
    graph = CategoricalPGGraph(2, DiscreteSpace(2), seed=0)
    zero = MlpParams(tuple(Layer(np.zeros_like(l.w), np.zeros_like(l.b))
                           for l in graph.params.layers))
    batch = SampleBatch({
        SampleBatch.OBS: np.ones((1, 2)),
        SampleBatch.ACTIONS: np.array([1]),
        SampleBatch.ADVANTAGES: np.array([1.0]),
    })
    loss, _ = pg_loss(zero, batch)
    assert loss == pytest.approx(-np.log(0.5))


def test_pg_loss_missing_column():
    graph = CategoricalPGGraph(2, DiscreteSpace(2), seed=0)
    batch = SampleBatch({SampleBatch.OBS: np.ones((2, 2)),
                         SampleBatch.ACTIONS: np.zeros(2, dtype=int)})
    with pytest.raises(MissingColumn):
        pg_loss(graph.params, batch)


@pytest.mark.parametrize("seed", range(3))
def test_pg_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    graph = CategoricalPGGraph(3, DiscreteSpace(4),
                               {"hidden_sizes": (8,)}, seed=seed)
    batch = make_pg_batch(rng, graph, rows=6)
    _, analytic = pg_loss(graph.params, batch)
    numeric = tensor.finite_diff_grad(
        lambda p: pg_loss(p, batch)[0], graph.params, epsilon=1e-5)
    assert max_rel_err(analytic, numeric) <= 1e-4


# ------------------------------------------------------------------ ppo loss

def ppo_batch_from_graph(rng, graph, rows=10):
    obs = rng.normal(size=(rows, graph.obs_dim))
    actions, _, aux = graph.act(obs, graph.empty_hidden(rows))
    return SampleBatch({
        SampleBatch.OBS: obs,
        SampleBatch.ACTIONS: actions,
        SampleBatch.ADVANTAGES: rng.normal(size=rows),
        SampleBatch.LOGP: aux[SampleBatch.LOGP],
        SampleBatch.VALUE_TARGETS: aux[SampleBatch.VF_PREDS],
    })


def test_ppo_unchanged_weights_surrogate_is_mean_advantage():
    rng = np.random.default_rng(0)
    graph = PPOGraph(3, DiscreteSpace(3), seed=0)
    batch = ppo_batch_from_graph(rng, graph)
    # rho = 1 and value targets equal predictions, so the MSE term is zero
    loss, _ = ppo_clip_loss(graph.params, batch, clip=0.2)
    assert loss == pytest.approx(-batch[SampleBatch.ADVANTAGES].mean(), abs=1e-10)


def test_ppo_clip_active_branch():
    clip = 0.2
    rng = np.random.default_rng(1)
    graph = PPOGraph(3, DiscreteSpace(3), seed=1)
    batch = ppo_batch_from_graph(rng, graph, rows=5)
    adv = np.abs(rng.normal(size=5)) + 0.1  # strictly positive
    batch[SampleBatch.ADVANTAGES] = adv
    # shift logp_old so rho = exp(logp - logp_old) = 1 + 2*clip exactly
    batch[SampleBatch.LOGP] = batch[SampleBatch.LOGP] - np.log(1 + 2 * clip)
    loss, _ = ppo_clip_loss(graph.params, batch, clip=clip)
    assert loss == pytest.approx(-np.mean((1 + clip) * adv), abs=1e-10)


@pytest.mark.parametrize("seed,entropy", [(0, 0.0), (1, 0.0), (2, 0.01)])
def test_ppo_gradient_matches_finite_differences(seed, entropy):
    rng = np.random.default_rng(seed)
    graph = PPOGraph(3, DiscreteSpace(3), {"hidden_sizes": (8,)}, seed=seed)
    batch = ppo_batch_from_graph(rng, graph, rows=8)
    batch[SampleBatch.LOGP] = batch[SampleBatch.LOGP] + rng.normal(
        scale=0.05, size=8)  # move off the rho=1 point
    batch[SampleBatch.VALUE_TARGETS] = rng.normal(size=8)
    _, analytic = ppo_clip_loss(graph.params, batch, clip=0.2,
                                entropy_coeff=entropy)
    numeric = tensor.finite_diff_grad(
        lambda p: ppo_clip_loss(p, batch, clip=0.2, entropy_coeff=entropy)[0],
        graph.params, epsilon=1e-5)
    assert max_rel_err(analytic, numeric) <= 1e-4


# ------------------------------------------------------------------ dqn loss

def dqn_batch(rng, graph, rows=10):
    obs = rng.normal(size=(rows, graph.obs_dim))
    return SampleBatch({
        SampleBatch.OBS: obs,
        SampleBatch.ACTIONS: rng.integers(0, graph.n_actions, rows),
        NSTEP_REWARDS: rng.normal(size=rows),
        BOOT_OBS: rng.normal(size=(rows, graph.obs_dim)),
        BOOT_DISCOUNT: np.full(rows, 0.9),
    })


def test_dqn_loss_zero_when_q_equals_targets():
    rng = np.random.default_rng(0)
    graph = DQNGraph(3, DiscreteSpace(3), seed=0)
    batch = dqn_batch(rng, graph)
    q, _ = tensor.mlp_forward(graph.params, batch[SampleBatch.OBS])
    actions = batch[SampleBatch.ACTIONS].astype(int)
    batch[BOOT_DISCOUNT] = np.zeros(batch.row_count)
    batch[NSTEP_REWARDS] = q[np.arange(len(actions)), actions]
    loss, grads, td = dqn_loss(graph.params, graph.target_params, batch)
    assert loss == 0.0
    assert np.allclose(td, 0.0)
    for g in grads:
        assert np.allclose(g.w, 0)


def test_dqn_loss_single_transition_hand_computed():
    """Linear Q on a single transition, huber computed by hand."""
    params = MlpParams((Layer(np.array([[1.0, -1.0]]), np.array([0.5, 0.0])),))
    target = MlpParams((Layer(np.array([[2.0, 0.0]]), np.array([0.0, 0.0])),))
    batch = SampleBatch({
        SampleBatch.OBS: np.array([[2.0]]),
        SampleBatch.ACTIONS: np.array([0]),
        NSTEP_REWARDS: np.array([1.0]),
        BOOT_OBS: np.array([[1.0]]),
        BOOT_DISCOUNT: np.array([0.9]),
    })
    # q(obs)=1*2+0.5=2.5; boot q = max(2*1, 0)=2; target=1+0.9*2=2.8
    # td=-0.3, |td|<1 -> loss=0.5*0.09=0.045
    loss, _, td = dqn_loss(params, target, batch)
    assert td[0] == pytest.approx(-0.3)
    assert loss == pytest.approx(0.045)


@pytest.mark.parametrize("seed", range(3))
def test_dqn_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    graph = DQNGraph(3, DiscreteSpace(3), {"hidden_sizes": (8,)}, seed=seed)
    batch = dqn_batch(rng, graph, rows=8)
    _, analytic, _ = dqn_loss(graph.params, graph.target_params, batch)
    numeric = tensor.finite_diff_grad(
        lambda p: dqn_loss(p, graph.target_params, batch)[0],
        graph.params, epsilon=1e-5)
    assert max_rel_err(analytic, numeric) <= 1e-4


def test_target_sync_exact_and_idempotent():
    graph = DQNGraph(3, DiscreteSpace(2), seed=4)
    graph.set_weights(tensor.init_mlp([3, 64, 64, 2], seed=99))
    assert graph.get_target_weights() is not graph.get_weights()
    graph.sync_target()
    for a, b in zip(graph.get_weights().layers, graph.get_target_weights().layers):
        assert a.w.tobytes() == b.w.tobytes()
    before = graph.get_target_weights()
    graph.sync_target()
    assert graph.get_target_weights() is before or all(
        x.w.tobytes() == y.w.tobytes()
        for x, y in zip(graph.get_target_weights().layers, before.layers))


def test_target_sync_changes_subsequent_losses():
    """Train a few steps, then sync; the loss on a fixed batch changes
    because targets now use the new target weights."""
    rng = np.random.default_rng(5)
    graph = DQNGraph(3, DiscreteSpace(3), {"hidden_sizes": (8,)}, seed=5)
    batch = dqn_batch(rng, graph)
    for _ in range(5):
        _, grads, _ = dqn_loss(graph.params, graph.target_params, batch)
        graph.set_weights(tensor.sgd_step(graph.params, grads, 0.5))
    loss_before, _, _ = dqn_loss(graph.params, graph.target_params, batch)
    graph.sync_target()
    loss_after, _, _ = dqn_loss(graph.params, graph.target_params, batch)
    assert loss_before != loss_after


# ----------------------------------------------------------- dqn postprocess

def test_dqn_postprocess_nstep_columns():
    graph = DQNGraph(2, DiscreteSpace(2), {"n_step": 2, "gamma": 0.5}, seed=0)
    batch = SampleBatch({
        SampleBatch.OBS: np.zeros((3, 2)),
        SampleBatch.ACTIONS: np.zeros(3, dtype=int),
        SampleBatch.REWARDS: np.array([1.0, 2.0, 4.0]),
        SampleBatch.DONES: np.array([False, False, True]),
        SampleBatch.NEW_OBS: np.arange(6, dtype=float).reshape(3, 2),
    })
    out = graph.postprocess(batch)
    assert np.allclose(out[NSTEP_REWARDS], [1 + 0.5 * 2, 2 + 0.5 * 4, 4.0])
    assert np.allclose(out[BOOT_DISCOUNT], [0.25, 0.0, 0.0])
    assert np.array_equal(out[BOOT_OBS][0], batch[SampleBatch.NEW_OBS][1])


# ----------------------------------------------------------------- multiagent

def test_shared_reward_postprocess_sums_peer_rewards():
    graph = SharedRewardPGGraph(3, DiscreteSpace(2), seed=0)
    own = SampleBatch({
        SampleBatch.OBS: np.zeros((4, 3)),
        SampleBatch.ACTIONS: np.zeros(4, dtype=int),
        SampleBatch.REWARDS: np.array([1.0, 0.0, 1.0, 0.0]),
        SampleBatch.DONES: np.array([False, False, False, True]),
        SampleBatch.NEW_OBS: np.zeros((4, 3)),
    })
    peer = SampleBatch({
        SampleBatch.REWARDS: np.array([0.0, 1.0, 1.0, 0.0]),
    })
    out = graph.postprocess(own, [peer])
    assert np.allclose(out[SampleBatch.REWARDS], [1.0, 1.0, 2.0, 0.0])
    assert SampleBatch.ADVANTAGES in out
