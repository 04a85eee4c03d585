"""Policy evaluator: wraps a policy graph plus environment(s) and produces
columnar sample batches on demand.

Evaluators run as runtime actors. Vectorized evaluation steps all parallel
environments in lockstep with one batched forward pass per step; truncate
mode returns exactly batch_size rows and carries partial episodes between
calls. Postprocessing runs here, on the evaluator, so the driver stays
light.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .. import tensor
from ..envs import TwoAgentCoin, make_env
from ..policy import make_graph
from ..sample_batch import SampleBatch
from ..taskrt import current_context
from .compression import ensure_batch, maybe_compress


class MisalignedEpisodes(Exception):
    pass


@dataclass
class EvaluatorConfig:
    batch_size: int = 200
    mode: str = "truncate_episodes"  # or "complete_episodes"
    num_parallel_envs: int = 1
    seed: int = 0
    env_options: dict = field(default_factory=dict)
    graph_overrides: dict = field(default_factory=dict)
    compress_threshold: int = 64 * 1024
    dump_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_parallel_envs < 1:
            raise ValueError("num_parallel_envs must be >= 1")
        if self.mode not in ("truncate_episodes", "complete_episodes"):
            raise ValueError(f"unknown mode {self.mode!r}")


class _EnvSlot:
    """One running environment plus its in-progress episode rows."""

    def __init__(self, env, eps_base: int, reset_seed: int):
        self.env = env
        self.obs = env.reset(seed=reset_seed)
        self.eps_seq = 0
        self.eps_base = eps_base
        self.t = 0
        self.rows: list[dict] = []

    @property
    def eps_id(self) -> int:
        return self.eps_base + self.eps_seq

    def begin_new_episode(self) -> None:
        self.obs = self.env.reset()
        self.eps_seq += 1
        self.t = 0
        self.rows = []


class PolicyEvaluator:
    """Single-policy evaluator over one or more parallel environments."""

    def __init__(self, graph_kind: str, graph_config: dict | None,
                 env_name: str, config: EvaluatorConfig,
                 evaluator_index: int = 0):
        self.config = config
        self.index = evaluator_index
        graph_config = dict(graph_config or {})
        graph_config.update(config.graph_overrides)
        probe = make_env(env_name, seed=0, **config.env_options)
        spec = probe.spec()
        self.graph = make_graph(graph_kind, spec.obs_dim, spec.action_space,
                                graph_config, seed=config.seed)
        self._slots = []
        for j in range(config.num_parallel_envs):
            env = make_env(env_name, seed=config.seed + j, **config.env_options)
            eps_base = ((config.seed & 0xFFFF) << 40) | (j << 28)
            self._slots.append(_EnvSlot(env, eps_base, config.seed + j))
        self.forward_passes = 0
        self.timesteps = 0
        self._completed_returns: list[float] = []
        self._episodes_total = 0
        self._dump_seq = 0

    # -- column assembly ------------------------------------------------------

    def _make_row(self, slot: _EnvSlot, action, aux: dict, result) -> dict:
        row = {
            SampleBatch.OBS: np.asarray(slot.obs),
            SampleBatch.ACTIONS: action,
            SampleBatch.REWARDS: result.reward,
            SampleBatch.DONES: result.done,
            SampleBatch.NEW_OBS: np.asarray(result.obs),
            SampleBatch.H: np.zeros(self.graph.hidden_dim),
            SampleBatch.H_NEXT: np.zeros(self.graph.hidden_dim),
            SampleBatch.EPS_ID: slot.eps_id,
            SampleBatch.AGENT_ID: 0,
            SampleBatch.T: slot.t,
        }
        row.update(aux)
        return row

    def _postprocess_fragment(self, rows: list[dict]) -> SampleBatch:
        return self.graph.postprocess(SampleBatch.from_rows(rows))

    def _finalize(self, fragments: list[SampleBatch]) -> SampleBatch:
        batch = SampleBatch.concat(fragments)
        finalize = getattr(self.graph, "finalize_batch", None)
        if finalize is not None:
            batch = finalize(batch)
        if self.config.dump_dir:
            path = os.path.join(self.config.dump_dir,
                                f"batch_{self.index}_{self._dump_seq:05d}.bin")
            with open(path, "wb") as f:
                f.write(batch.to_bytes())
            self._dump_seq += 1
        return batch

    # -- sampling -------------------------------------------------------------

    def sample(self) -> SampleBatch:
        if self.config.mode == "truncate_episodes":
            batch = self._sample_truncate()
        else:
            batch = self._sample_complete()
        self.timesteps += batch.row_count
        return batch

    def _step_all_slots(self, fragments: list[SampleBatch]) -> None:
        """One lockstep transition of every parallel env (one forward pass)."""
        obs = np.stack([slot.obs for slot in self._slots])
        h = self.graph.empty_hidden(len(self._slots))
        actions, _, aux = self.graph.act(obs, h)
        self.forward_passes += 1
        for j, slot in enumerate(self._slots):
            action = actions[j]
            env_action = int(action) if np.ndim(action) == 0 else action
            result = slot.env.step(env_action)
            row_aux = {k: v[j] for k, v in aux.items()}
            slot.rows.append(self._make_row(slot, action, row_aux, result))
            slot.obs = result.obs
            slot.t += 1
            if result.done:
                self._completed_returns.append(
                    float(sum(r[SampleBatch.REWARDS] for r in slot.rows)))
                self._episodes_total += 1
                fragments.append(self._postprocess_fragment(slot.rows))
                slot.begin_new_episode()

    def _sample_truncate(self) -> SampleBatch:
        want = self.config.batch_size
        fragments: list[SampleBatch] = []
        done_rows = 0

        def pending_rows() -> int:
            return done_rows + sum(len(s.rows) for s in self._slots)

        while pending_rows() < want:
            before = len(fragments)
            self._step_all_slots(fragments)
            done_rows += sum(f.row_count for f in fragments[before:])

        # cut in-progress episodes to land exactly on batch_size rows
        need = want - done_rows
        for slot in self._slots:
            if need <= 0:
                break
            if not slot.rows:
                continue
            take = min(need, len(slot.rows))
            cut, rest = slot.rows[:take], slot.rows[take:]
            fragments.append(self._postprocess_fragment(cut))
            slot.rows = rest
            need -= take
        batch = self._finalize(fragments)
        assert batch.row_count == want
        return batch

    def _sample_complete(self) -> SampleBatch:
        want = self.config.batch_size
        fragments: list[SampleBatch] = []
        while sum(f.row_count for f in fragments) < want:
            self._step_all_slots(fragments)
        return self._finalize(fragments)

    # -- actor surface ----------------------------------------------------------

    def sample_to_store(self):
        """Sample and publish to the object store (compressed when the obs
        column is heavy); returns the ObjectRef handle."""
        batch = maybe_compress(self.sample(), self.config.compress_threshold)
        return current_context().put(batch)

    def sample_and_grad(self):
        """One sampling round plus gradients on the local graph's weights."""
        batch = self.sample()
        loss, grads = self.graph.gradients(batch)
        return grads, {"loss": loss, "rows": batch.row_count}

    def sample_and_grad_to_store(self):
        grads, info = self.sample_and_grad()
        return current_context().put(grads), info

    def sample_and_flat_grad_to_store(self):
        """Like sample_and_grad but publishes the flattened gradient vector,
        the layout parameter-server shards consume."""
        grads, info = self.sample_and_grad()
        flat = tensor.flatten_layers(grads)
        return current_context().put(flat), info

    def grad_on_weights(self, weights):
        """Gradient task for the asynchronous optimizer: refresh weights,
        sample, differentiate."""
        self.set_weights(weights)
        return self.sample_and_grad()

    def set_weights(self, weights) -> None:
        self.graph.set_weights(weights)

    def set_weights_from_slices(self, slices: list) -> None:
        """Install weights from parameter-server shard slices (index order)."""
        flat = np.concatenate([np.asarray(s) for s in slices])
        template = self.graph.get_weights()
        self.graph.set_weights(tensor.unflatten_params(template, flat))

    def get_weights(self):
        return self.graph.get_weights()

    def call_graph(self, method: str, *args):
        """Utility passthrough (target sync, schedule updates, ...)."""
        return getattr(self.graph, method)(*args)

    def pop_metrics(self) -> dict:
        episodes = self._completed_returns
        self._completed_returns = []
        return {
            "episode_returns": episodes,
            "episodes_total": self._episodes_total,
            "timesteps": self.timesteps,
            "forward_passes": self.forward_passes,
        }

    def evaluate_episodes(self, episodes: int, greedy: bool = True,
                          seed: int | None = None) -> list[float]:
        """Run isolated evaluation episodes without touching sampling state."""
        returns = []
        eval_env = self._clone_env(seed if seed is not None else self.config.seed)
        for e in range(episodes):
            obs = eval_env.reset(seed=(seed or self.config.seed) + 1000 + e)
            total, done = 0.0, False
            while not done:
                actions, _, _ = self.graph.act(obs[None, :],
                                               self.graph.empty_hidden(1),
                                               explore=not greedy)
                action = actions[0]
                result = eval_env.step(int(action) if np.ndim(action) == 0
                                       else action)
                total += result.reward
                obs = result.obs
                done = result.done
            returns.append(total)
        return returns

    def _clone_env(self, seed: int):
        slot_env = self._slots[0].env
        return type(slot_env)(seed=seed, **self.config.env_options)

    # -- derivative-free fitness -------------------------------------------------

    def es_fitness(self, flat_weights: np.ndarray, episodes: int = 1,
                   seed: int = 0) -> float:
        template = self.graph.get_weights()
        self.graph.set_weights(tensor.unflatten_params(template, flat_weights))
        returns = self.evaluate_episodes(episodes, greedy=True, seed=seed)
        self.graph.set_weights(template)
        return float(np.mean(returns))

    def es_fitness_pair(self, flat_theta: np.ndarray, noise_seed: int,
                        sigma: float, episodes: int = 1, seed: int = 0):
        """Antithetic fitness pair for perturbation noise drawn from
        noise_seed: returns (F+, F-)."""
        eps = np.random.default_rng(noise_seed).normal(size=flat_theta.size)
        f_plus = self.es_fitness(flat_theta + sigma * eps, episodes, seed)
        f_minus = self.es_fitness(flat_theta - sigma * eps, episodes, seed)
        return f_plus, f_minus

    def es_fitness_seeds(self, flat_theta: np.ndarray, noise_seeds,
                         sigma: float, episodes: int = 1, seed: int = 0):
        """Batched antithetic pairs, one (F+, F-) tuple per noise seed."""
        return [self.es_fitness_pair(flat_theta, int(ns), sigma, episodes, seed)
                for ns in noise_seeds]


def collate_multiagent(trajectories: dict[str, SampleBatch]):
    """Validate time alignment and give each agent's batch access to its
    peers: {agent: (own batch, [peer batches])}."""
    agents = sorted(trajectories)
    if not agents:
        return {}
    counts = {a: trajectories[a].row_count for a in agents}
    if len(set(counts.values())) != 1:
        raise MisalignedEpisodes(f"row counts differ: {counts}")
    first = trajectories[agents[0]]
    for a in agents[1:]:
        b = trajectories[a]
        if not np.array_equal(first[SampleBatch.T], b[SampleBatch.T]):
            raise MisalignedEpisodes("time indices differ between agents")
    return {a: (trajectories[a],
                [trajectories[o] for o in agents if o != a])
            for a in agents}


class MultiAgentEvaluator:
    """Evaluator for the two-agent coordination env: one shared policy acts
    for every agent; postprocess sees peer batches (shared-reward critic)."""

    def __init__(self, graph_kind: str, graph_config: dict | None,
                 config: EvaluatorConfig):
        self.config = config
        self.env = TwoAgentCoin(seed=config.seed)
        spec = self.env.spec()
        self.graph = make_graph(graph_kind, spec.obs_dim, spec.action_space,
                                dict(graph_config or {}), seed=config.seed)
        self._eps = 0
        self.timesteps = 0

    def sample(self) -> dict[str, SampleBatch]:
        """One full episode per call; returns the per-agent postprocessed
        batches."""
        obs = self.env.reset(seed=self.config.seed + self._eps)
        agents = list(self.env.AGENTS)
        rows = {a: [] for a in agents}
        t, done = 0, False
        while not done:
            stacked = np.stack([obs[a] for a in agents])
            actions, _, aux = self.graph.act(stacked,
                                             self.graph.empty_hidden(len(agents)))
            act_map = {a: int(actions[i]) for i, a in enumerate(agents)}
            new_obs, rewards, done = self.env.step(act_map)
            for i, a in enumerate(agents):
                row = {
                    SampleBatch.OBS: obs[a],
                    SampleBatch.ACTIONS: act_map[a],
                    SampleBatch.REWARDS: rewards[a],
                    SampleBatch.DONES: done,
                    SampleBatch.NEW_OBS: new_obs[a],
                    SampleBatch.EPS_ID: self._eps,
                    SampleBatch.AGENT_ID: i,
                    SampleBatch.T: t,
                }
                for k, v in aux.items():
                    row[k] = v[i]
                rows[a].append(row)
            obs = new_obs
            t += 1
        self._eps += 1
        self.timesteps += t * len(agents)
        raw = {a: SampleBatch.from_rows(rows[a]) for a in agents}
        collated = collate_multiagent(raw)
        # peers must see pre-postprocess rows, not another agent's edits
        frozen = {a: raw[a].copy() for a in agents}
        out = {}
        for a, (own, _) in collated.items():
            peers = [frozen[o] for o in agents if o != a]
            out[a] = self.graph.postprocess(own, peers)
        return out
