"""Concrete policy graphs: categorical policy gradient, clipped-surrogate
PPO, DQN with n-step targets, a deterministic continuous policy for
derivative-free training, and a shared-reward multi-agent variant.

Loss functions are module-level and purely functional in (weights, batch)
so gradient tests can finite-difference them directly.
"""

from __future__ import annotations

import numpy as np

from .. import tensor
from ..envs import ContinuousSpace, DiscreteSpace
from ..sample_batch import MissingColumn, SampleBatch
from .advantages import AdvantageConfig, compute_gae, nstep_parts
from .graph import ExplorationSchedule, PolicyGraph, epsilon_at

# extra columns produced by DQN postprocessing
NSTEP_REWARDS = "nstep_rewards"
BOOT_OBS = "boot_obs"
BOOT_DISCOUNT = "boot_discount"


def _require(batch: SampleBatch, *columns: str) -> None:
    for c in columns:
        if c not in batch:
            raise MissingColumn(f"batch lacks required column {c!r}")


def _onehot_minus_probs(logp: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """d logp(a|o) / d logits for each row."""
    grad = -np.exp(logp)
    grad[np.arange(len(actions)), actions] += 1.0
    return grad


def pg_loss(params: tensor.MlpParams, batch: SampleBatch):
    """loss = -mean(log pi(a|o) * advantage); returns (loss, grads)."""
    _require(batch, SampleBatch.OBS, SampleBatch.ACTIONS, SampleBatch.ADVANTAGES)
    obs = batch[SampleBatch.OBS]
    actions = batch[SampleBatch.ACTIONS].astype(np.int64)
    adv = batch[SampleBatch.ADVANTAGES]
    n = len(actions)
    logits, cache = tensor.mlp_forward(params, obs)
    logp = tensor.log_softmax(logits)
    chosen = logp[np.arange(n), actions]
    loss = -float(np.mean(chosen * adv))
    upstream = -(adv[:, None] / n) * _onehot_minus_probs(logp, actions)
    return loss, tensor.mlp_backward(cache, upstream)


def ppo_clip_loss(params: tensor.MlpParams, batch: SampleBatch, clip: float,
                  vf_coeff: float = 0.5, entropy_coeff: float = 0.0):
    """Clipped surrogate -mean(min(rho*A, clip(rho)*A)) plus vf_coeff * MSE
    value loss, minus an optional entropy bonus. Returns (loss, grads)."""
    _require(batch, SampleBatch.OBS, SampleBatch.ACTIONS, SampleBatch.ADVANTAGES,
             SampleBatch.LOGP, SampleBatch.VALUE_TARGETS)
    obs = batch[SampleBatch.OBS]
    actions = batch[SampleBatch.ACTIONS].astype(np.int64)
    adv = batch[SampleBatch.ADVANTAGES]
    logp_old = batch[SampleBatch.LOGP]
    targets = batch[SampleBatch.VALUE_TARGETS]
    n = len(actions)

    out, cache = tensor.mlp_forward(params, obs)
    logits, values = out[:, :-1], out[:, -1]
    logp = tensor.log_softmax(logits)
    chosen = logp[np.arange(n), actions]
    rho = np.exp(chosen - logp_old)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip) * adv
    surrogate = np.minimum(unclipped, clipped)
    v_err = values - targets
    entropy = -(np.exp(logp) * logp).sum(axis=1)
    loss = (-float(np.mean(surrogate))
            + vf_coeff * float(np.mean(v_err ** 2))
            - entropy_coeff * float(np.mean(entropy)))

    # gradient flows through rho only where the unclipped branch is the min
    live = (unclipped <= clipped).astype(np.float64)
    dlogp = -(live * rho * adv) / n
    upstream = np.zeros_like(out)
    upstream[:, :-1] = dlogp[:, None] * _onehot_minus_probs(logp, actions)
    if entropy_coeff != 0.0:
        probs = np.exp(logp)
        upstream[:, :-1] += (entropy_coeff / n) * probs * (logp + entropy[:, None])
    upstream[:, -1] = vf_coeff * 2.0 * v_err / n
    return loss, tensor.mlp_backward(cache, upstream)


def dqn_loss(params: tensor.MlpParams, target_params: tensor.MlpParams,
             batch: SampleBatch, huber_delta: float = 1.0):
    """Huber loss on Q(o,a) minus the n-step target; the bootstrap term is
    recomputed here with the target weights, so target syncs are observable
    through the loss. Returns (loss, grads, td_errors)."""
    _require(batch, SampleBatch.OBS, SampleBatch.ACTIONS, NSTEP_REWARDS,
             BOOT_OBS, BOOT_DISCOUNT)
    obs = batch[SampleBatch.OBS]
    actions = batch[SampleBatch.ACTIONS].astype(np.int64)
    n = len(actions)

    boot_q, _ = tensor.mlp_forward(target_params, batch[BOOT_OBS])
    targets = batch[NSTEP_REWARDS] + batch[BOOT_DISCOUNT] * boot_q.max(axis=1)
    q, cache = tensor.mlp_forward(params, obs)
    td = q[np.arange(n), actions] - targets
    abs_td = np.abs(td)
    quadratic = np.minimum(abs_td, huber_delta)
    loss = float(np.mean(0.5 * quadratic ** 2
                         + huber_delta * (abs_td - quadratic)))
    dq = np.clip(td, -huber_delta, huber_delta) / n
    upstream = np.zeros_like(q)
    upstream[np.arange(n), actions] = dq
    return loss, tensor.mlp_backward(cache, upstream), td


class CategoricalPGGraph(PolicyGraph):
    """Vanilla policy gradient: stochastic categorical policy, Monte-Carlo
    advantages (GAE over a zero value function, lambda defaulting to 1)."""

    aux_output_names = (SampleBatch.LOGP,)

    def __init__(self, obs_dim: int, action_space, config=None, seed: int = 0):
        if not isinstance(action_space, DiscreteSpace):
            raise ValueError("categorical graph needs a discrete action space")
        self.n_actions = action_space.n
        super().__init__(obs_dim, self.n_actions, config, seed)
        self.adv_cfg = AdvantageConfig(
            gamma=self.config.get("gamma", 0.99),
            lam=self.config.get("lam", 1.0),
        )
        self.advantage_norm = bool(self.config.get("advantage_norm", True))

    def _logits(self, obs: np.ndarray) -> np.ndarray:
        out, _ = tensor.mlp_forward(self.params, obs)
        return out

    def act(self, obs, h, explore: bool = True):
        logp = tensor.log_softmax(self._logits(obs))
        if explore:
            actions = self._sample_categorical(logp)
        else:
            actions = logp.argmax(axis=1)
        aux = {SampleBatch.LOGP: logp[np.arange(len(actions)), actions]}
        return actions, self.empty_hidden(len(actions)), aux

    def postprocess(self, batch, peer_batches=()):
        zeros = np.zeros(batch.row_count)
        adv, _ = compute_gae(batch[SampleBatch.REWARDS], zeros,
                             batch[SampleBatch.DONES], 0.0, self.adv_cfg)
        batch[SampleBatch.ADVANTAGES] = adv
        return batch

    def finalize_batch(self, batch):
        if self.advantage_norm and SampleBatch.ADVANTAGES in batch:
            adv = batch[SampleBatch.ADVANTAGES]
            batch[SampleBatch.ADVANTAGES] = (
                (adv - adv.mean()) / (adv.std() + 1e-8))
        return batch

    def gradients(self, batch):
        return pg_loss(self.params, batch)


class PPOGraph(PolicyGraph):
    """Clipped-surrogate PPO with a value head sharing the trunk; sampling
    records logp and value predictions as aux outputs."""

    aux_output_names = (SampleBatch.LOGP, SampleBatch.VF_PREDS)

    def __init__(self, obs_dim: int, action_space, config=None, seed: int = 0):
        if not isinstance(action_space, DiscreteSpace):
            raise ValueError("this PPO graph needs a discrete action space")
        self.n_actions = action_space.n
        super().__init__(obs_dim, self.n_actions + 1, config, seed)
        self.adv_cfg = AdvantageConfig(
            gamma=self.config.get("gamma", 0.995),
            lam=self.config.get("lam", 0.95),
        )
        self.clip = float(self.config.get("clip", 0.2))
        self.vf_coeff = float(self.config.get("vf_coeff", 0.5))
        self.entropy_coeff = float(self.config.get("entropy_coeff", 0.0))
        self.advantage_norm = bool(self.config.get("advantage_norm", True))

    def _heads(self, obs: np.ndarray):
        out, _ = tensor.mlp_forward(self.params, obs)
        return out[:, :-1], out[:, -1]

    def act(self, obs, h, explore: bool = True):
        logits, values = self._heads(obs)
        logp = tensor.log_softmax(logits)
        if explore:
            actions = self._sample_categorical(logp)
        else:
            actions = logp.argmax(axis=1)
        aux = {
            SampleBatch.LOGP: logp[np.arange(len(actions)), actions],
            SampleBatch.VF_PREDS: values,
        }
        return actions, self.empty_hidden(len(actions)), aux

    def postprocess(self, batch, peer_batches=()):
        dones = batch[SampleBatch.DONES]
        if dones[-1]:
            bootstrap = 0.0
        else:
            last_obs = batch[SampleBatch.NEW_OBS][-1:]
            bootstrap = float(self._heads(last_obs)[1][0])
        adv, targets = compute_gae(
            batch[SampleBatch.REWARDS], batch[SampleBatch.VF_PREDS],
            dones, bootstrap, self.adv_cfg)
        batch[SampleBatch.ADVANTAGES] = adv
        batch[SampleBatch.VALUE_TARGETS] = targets
        return batch

    def finalize_batch(self, batch):
        if self.advantage_norm and SampleBatch.ADVANTAGES in batch:
            adv = batch[SampleBatch.ADVANTAGES]
            batch[SampleBatch.ADVANTAGES] = (
                (adv - adv.mean()) / (adv.std() + 1e-8))
        return batch

    def gradients(self, batch):
        return ppo_clip_loss(self.params, batch, self.clip, self.vf_coeff,
                             self.entropy_coeff)


class DQNGraph(PolicyGraph):
    """Q-network with epsilon-greedy exploration, a separately held target
    network, and n-step return postprocessing. The TD error comes back from
    the loss for priority updates."""

    aux_output_names = ()

    def __init__(self, obs_dim: int, action_space, config=None, seed: int = 0):
        if not isinstance(action_space, DiscreteSpace):
            raise ValueError("DQN needs a discrete action space")
        self.n_actions = action_space.n
        super().__init__(obs_dim, self.n_actions, config, seed)
        self.target_params = self.params
        self.gamma = float(self.config.get("gamma", 0.95))
        self.n_step = int(self.config.get("n_step", 3))
        self.huber_delta = float(self.config.get("huber_delta", 1.0))
        override = self.config.get("epsilon_override")
        self.epsilon_override = None if override is None else float(override)
        self.schedule = ExplorationSchedule(
            eps_start=float(self.config.get("eps_start", 1.0)),
            eps_end=float(self.config.get("eps_end", 0.05)),
            decay_steps=int(self.config.get("eps_decay_steps", 10_000)),
        )
        self.exploration_timestep = 0

    def current_epsilon(self) -> float:
        if self.epsilon_override is not None:
            return self.epsilon_override
        return epsilon_at(self.schedule, self.exploration_timestep)

    def act(self, obs, h, explore: bool = True):
        q, _ = tensor.mlp_forward(self.params, obs)
        actions = q.argmax(axis=1)
        if explore:
            eps = self.current_epsilon()
            flip = self._rng.random(len(actions)) < eps
            random_actions = self._rng.integers(0, self.n_actions, len(actions))
            actions = np.where(flip, random_actions, actions)
        return actions.astype(np.int64), self.empty_hidden(len(actions)), {}

    def postprocess(self, batch, peer_batches=()):
        partial, boot_index, boot_discount = nstep_parts(
            batch[SampleBatch.REWARDS], batch[SampleBatch.DONES],
            self.n_step, self.gamma)
        batch[NSTEP_REWARDS] = partial
        batch[BOOT_OBS] = batch[SampleBatch.NEW_OBS][boot_index]
        batch[BOOT_DISCOUNT] = boot_discount
        return batch

    def gradients(self, batch):
        loss, grads, _ = self.gradients_with_td(batch)
        return loss, grads

    def gradients_with_td(self, batch):
        return dqn_loss(self.params, self.target_params, batch, self.huber_delta)

    # utility u1: target sync
    def sync_target(self) -> None:
        self.target_params = self.params

    def get_target_weights(self) -> tensor.MlpParams:
        return self.target_params

    # utility u2: exploration schedule position
    def set_exploration_timestep(self, t: int) -> None:
        self.exploration_timestep = int(t)


class ContinuousPolicyGraph(PolicyGraph):
    """Deterministic tanh-squashed continuous policy; trained by
    derivative-free optimization, so it defines no loss."""

    aux_output_names = ()

    def __init__(self, obs_dim: int, action_space, config=None, seed: int = 0):
        if not isinstance(action_space, ContinuousSpace):
            raise ValueError("continuous graph needs a continuous action space")
        self.space = action_space
        super().__init__(obs_dim, action_space.dim, config, seed)

    def act(self, obs, h, explore: bool = True):
        out, _ = tensor.mlp_forward(self.params, obs)
        mid = (self.space.high + self.space.low) / 2.0
        half = (self.space.high - self.space.low) / 2.0
        actions = mid + half * np.tanh(out)
        return actions, self.empty_hidden(len(actions)), {}


class SharedRewardPGGraph(CategoricalPGGraph):
    """Multi-agent demo graph: collates peer rewards into a shared-reward
    signal before standard advantage estimation."""

    def postprocess(self, batch, peer_batches=()):
        total = batch[SampleBatch.REWARDS].astype(np.float64).copy()
        for peer in peer_batches:
            if peer.row_count != batch.row_count:
                raise ValueError("peer batches must be time-aligned")
            total += peer[SampleBatch.REWARDS]
        batch[SampleBatch.REWARDS] = total
        return super().postprocess(batch, peer_batches)


GRAPH_CLASSES = {
    "pg": CategoricalPGGraph,
    "ppo": PPOGraph,
    "dqn": DQNGraph,
    "continuous": ContinuousPolicyGraph,
    "shared_reward_pg": SharedRewardPGGraph,
}


def make_graph(kind: str, obs_dim: int, action_space, config=None,
               seed: int = 0) -> PolicyGraph:
    try:
        cls = GRAPH_CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown graph {kind!r}") from None
    return cls(obs_dim, action_space, config, seed)
