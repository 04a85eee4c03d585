"""Deterministic desk-scale environments.

All dynamics constants are fixed in-code defaults (config-overridable) and
chosen so optimal returns are analytic. An optional per-step service delay
stands in for expensive third-party simulators in scheduling tests, and a
synthetic image-like observation mode exists to exercise compression.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np


class EpisodeFinished(Exception):
    pass


class InvalidAction(Exception):
    pass


@dataclass(frozen=True)
class DiscreteSpace:
    n: int

    def contains(self, action) -> bool:
        return isinstance(action, (int, np.integer)) and 0 <= action < self.n


@dataclass(frozen=True)
class ContinuousSpace:
    dim: int
    low: float
    high: float

    def contains(self, action) -> bool:
        arr = np.atleast_1d(np.asarray(action, dtype=np.float64))
        return arr.shape == (self.dim,) and bool(
            np.all(arr >= self.low) and np.all(arr <= self.high))


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_space: DiscreteSpace | ContinuousSpace
    horizon: int


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool


class _EnvBase:
    def __init__(self, seed: int = 0, step_delay_s: float = 0.0):
        self._rng = np.random.default_rng(seed)
        self._t = 0
        self._done = True
        self._step_delay_s = step_delay_s

    def spec(self) -> EnvSpec:
        raise NotImplementedError

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._t = 0
        self._done = False
        return self._reset_state()

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeFinished("reset the environment before stepping")
        spec = self.spec()
        if not spec.action_space.contains(action):
            raise InvalidAction(f"{action!r} not in {spec.action_space}")
        if self._step_delay_s > 0:
            time.sleep(self._step_delay_s)
        obs, reward, done = self._transition(action)
        self._t += 1
        if self._t >= spec.horizon:
            done = True
        self._done = done
        return StepResult(obs, float(reward), bool(done))

    def _reset_state(self) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, action):
        raise NotImplementedError


class GridWorld(_EnvBase):
    """5x5 grid; actions U/D/L/R clip at walls; +1 at the far corner, which
    ends the episode. Optimal return is exactly 1, reachable in 8 steps."""

    SIZE = 5
    GOAL = (4, 4)
    MOVES = {0: (0, -1), 1: (0, 1), 2: (-1, 0), 3: (1, 0)}  # U D L R

    def __init__(self, seed: int = 0, horizon: int = 100,
                 image_obs: bool = False, step_delay_s: float = 0.0):
        super().__init__(seed, step_delay_s)
        self.horizon = horizon
        self.image_obs = image_obs
        self._pos = (0, 0)

    def spec(self) -> EnvSpec:
        obs_dim = 84 * 84 if self.image_obs else self.SIZE * self.SIZE
        return EnvSpec(obs_dim, DiscreteSpace(4), self.horizon)

    def _obs(self) -> np.ndarray:
        x, y = self._pos
        if self.image_obs:
            img = np.zeros((84, 84), dtype=np.uint8)
            img[y * 16:(y + 1) * 16, x * 16:(x + 1) * 16] = 255
            gx, gy = self.GOAL
            img[gy * 16:(gy + 1) * 16, gx * 16:(gx + 1) * 16] = 128
            return img.ravel()
        onehot = np.zeros(self.SIZE * self.SIZE, dtype=np.float64)
        onehot[y * self.SIZE + x] = 1.0
        return onehot

    def _reset_state(self) -> np.ndarray:
        self._pos = (0, 0)
        return self._obs()

    def _transition(self, action):
        dx, dy = self.MOVES[int(action)]
        x = min(max(self._pos[0] + dx, 0), self.SIZE - 1)
        y = min(max(self._pos[1] + dy, 0), self.SIZE - 1)
        self._pos = (x, y)
        if self._pos == self.GOAL:
            return self._obs(), 1.0, True
        return self._obs(), 0.0, False


class CartPoleLite(_EnvBase):
    """Classic cart-pole ODE with explicit Euler at dt=0.02 and a +-10 N
    force; fails past 12 degrees or |x| > 2.4; reward 1 per step."""

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    DT = 0.02
    THETA_LIMIT = 12 * math.pi / 180
    X_LIMIT = 2.4

    def __init__(self, seed: int = 0, horizon: int = 200,
                 step_delay_s: float = 0.0):
        super().__init__(seed, step_delay_s)
        self.horizon = horizon
        self._state = np.zeros(4)

    def spec(self) -> EnvSpec:
        return EnvSpec(4, DiscreteSpace(2), self.horizon)

    def _reset_state(self) -> np.ndarray:
        self._state = self._rng.uniform(-0.05, 0.05, size=4)
        return self._state.copy()

    def _transition(self, action):
        x, x_dot, theta, theta_dot = self._state
        force = self.FORCE if int(action) == 1 else -self.FORCE
        total_mass = self.MASS_CART + self.MASS_POLE
        pole_ml = self.MASS_POLE * self.HALF_LENGTH
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        temp = (force + pole_ml * theta_dot ** 2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t ** 2 / total_mass))
        x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
        x += self.DT * x_dot
        x_dot += self.DT * x_acc
        theta += self.DT * theta_dot
        theta_dot += self.DT * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        done = abs(theta) > self.THETA_LIMIT or abs(x) > self.X_LIMIT
        return self._state.copy(), 1.0, done


class PendulumLite(_EnvBase):
    """Pendulum swing-up with a torque-squared penalty; continuous torque in
    [-2, 2]. Exercises the continuous action head."""

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    G = 10.0
    M = 1.0
    L = 1.0

    def __init__(self, seed: int = 0, horizon: int = 200,
                 step_delay_s: float = 0.0):
        super().__init__(seed, step_delay_s)
        self.horizon = horizon
        self._theta = 0.0
        self._theta_dot = 0.0

    def spec(self) -> EnvSpec:
        return EnvSpec(3, ContinuousSpace(1, -self.MAX_TORQUE, self.MAX_TORQUE),
                       self.horizon)

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self._theta), math.sin(self._theta),
                         self._theta_dot])

    def _reset_state(self) -> np.ndarray:
        self._theta = self._rng.uniform(-math.pi, math.pi)
        self._theta_dot = self._rng.uniform(-1.0, 1.0)
        return self._obs()

    def _transition(self, action):
        u = float(np.atleast_1d(action)[0])
        angle = ((self._theta + math.pi) % (2 * math.pi)) - math.pi
        cost = angle ** 2 + 0.1 * self._theta_dot ** 2 + 0.001 * u ** 2
        self._theta_dot += (3 * self.G / (2 * self.L) * math.sin(self._theta)
                            + 3.0 / (self.M * self.L ** 2) * u) * self.DT
        self._theta_dot = max(-self.MAX_SPEED, min(self.MAX_SPEED, self._theta_dot))
        self._theta += self._theta_dot * self.DT
        return self._obs(), -cost, False


class TwoAgentCoin:
    """Two agents simultaneously pick 0/1; both get reward 1 iff they match.

    Fully symmetric: swapping agent identities swaps nothing in rewards.
    """

    AGENTS = ("agent_0", "agent_1")

    def __init__(self, seed: int = 0, horizon: int = 10):
        self.horizon = horizon
        self._t = 0
        self._done = True
        self._last = {a: 0 for a in self.AGENTS}

    def spec(self) -> EnvSpec:
        return EnvSpec(3, DiscreteSpace(2), self.horizon)

    def reset(self, seed: int | None = None) -> dict[str, np.ndarray]:
        self._t = 0
        self._done = False
        self._last = {a: 0 for a in self.AGENTS}
        return {a: self._obs(a) for a in self.AGENTS}

    def _obs(self, agent: str) -> np.ndarray:
        other = self.AGENTS[1] if agent == self.AGENTS[0] else self.AGENTS[0]
        return np.array([float(self._last[agent]), float(self._last[other]),
                         self._t / self.horizon])

    def step(self, actions: dict[str, int]):
        if self._done:
            raise EpisodeFinished("reset the environment before stepping")
        for a in self.AGENTS:
            if not DiscreteSpace(2).contains(actions[a]):
                raise InvalidAction(f"{actions[a]!r} for {a}")
        match = actions[self.AGENTS[0]] == actions[self.AGENTS[1]]
        reward = 1.0 if match else 0.0
        self._last = {a: int(actions[a]) for a in self.AGENTS}
        self._t += 1
        self._done = self._t >= self.horizon
        obs = {a: self._obs(a) for a in self.AGENTS}
        rewards = {a: reward for a in self.AGENTS}
        return obs, rewards, self._done


def synthetic_image_obs(rng: np.random.Generator) -> np.ndarray:
    """84x84 byte grid with large constant regions, for compression tests."""
    img = np.full((84, 84), 17, dtype=np.uint8)
    for _ in range(3):
        x0, y0 = rng.integers(0, 60, size=2)
        w, h = rng.integers(8, 24, size=2)
        img[y0:y0 + h, x0:x0 + w] = rng.integers(0, 256)
    return img.ravel()


ENV_NAMES = ("gridworld", "cartpole", "pendulum", "twoagentcoin")


def make_env(name: str, seed: int = 0, **options):
    name = name.lower()
    if name == "gridworld":
        return GridWorld(seed=seed, **options)
    if name == "cartpole":
        return CartPoleLite(seed=seed, **options)
    if name == "pendulum":
        return PendulumLite(seed=seed, **options)
    if name == "twoagentcoin":
        return TwoAgentCoin(seed=seed, **options)
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")
