"""Multi-objective MDPs small enough to train on a laptop.

Each environment exposes batched, pure ``dynamics`` used by the vectorised
rollout code, and a stateful ``reset``/``step`` pair that tracks the step
counter of one episode.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class EpisodeFinished(RuntimeError):
    pass


class UnknownEnvironment(KeyError):
    pass


@dataclass(frozen=True)
class MOMDPSpec:
    state_dim: int
    action_dim: int
    m: int
    horizon: int
    gamma: float
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.m < 2:
            raise ValueError("need at least two objectives")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if len(self.low) != self.action_dim or len(self.high) != self.action_dim:
            raise ValueError("bounds must have one entry per action dimension")
        if not all(np.isfinite(self.low)) or not all(np.isfinite(self.high)):
            raise ValueError("action bounds must be finite")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ValueError("need low < high on every action dimension")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray  # as proposed by the policy, before clipping
    reward: np.ndarray
    next_state: np.ndarray
    terminal: bool


class MOEnv:
    name = "base"
    spec: MOMDPSpec

    def __init__(self):
        self._t = 0
        self._done = True

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.spec.state_dim)

    def reset(self, seed=None) -> np.ndarray:
        # start states are deterministic; the seed is accepted for interface symmetry
        self._t = 0
        self._done = False
        return self.initial_state()

    def clip(self, actions: np.ndarray) -> np.ndarray:
        return np.clip(actions, self.spec.low, self.spec.high)

    def dynamics(self, states: np.ndarray, actions: np.ndarray):
        """Batched transition on clipped actions -> ``(next_states, rewards)``."""
        raise NotImplementedError

    def step(self, state, action) -> Transition:
        if self._done:
            raise EpisodeFinished("reset() before stepping a finished episode")
        s = np.asarray(state, dtype=float)
        a = np.asarray(action, dtype=float).reshape(self.spec.action_dim)
        nxt, r = self.dynamics(s[None, :], self.clip(a)[None, :])
        self._t += 1
        self._done = self._t >= self.spec.horizon
        return Transition(s, a, r[0], nxt[0], self._done)

    def true_ccs(self):
        return None

    @property
    def reference_point(self):
        return None


class ConcaveBandit(MOEnv):
    """One-step bandit whose action picks an angle on the quarter circle.

    ``a`` in [-1, 1] maps affinely to ``theta`` in [0, pi/2]; the reward is
    ``(cos theta, sin theta)``, so every action lands on a concave front.
    """

    name = "concave-bandit"
    spec = MOMDPSpec(state_dim=1, action_dim=1, m=2, horizon=1, gamma=0.99,
                     low=(-1.0,), high=(1.0,))

    @staticmethod
    def angle(actions) -> np.ndarray:
        a = np.clip(np.asarray(actions, dtype=float), -1.0, 1.0)
        return (a + 1.0) * (np.pi / 4.0)

    def dynamics(self, states, actions):
        theta = self.angle(actions[:, 0])
        return np.zeros_like(states), np.stack([np.cos(theta), np.sin(theta)], axis=1)

    def true_ccs(self):
        theta = np.linspace(0.0, np.pi / 2.0, 1001)
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)

    @property
    def reference_point(self):
        return np.zeros(2)


class PointMass2(MOEnv):
    """1-D point mass trading speed against actuation energy.

    ``v' = clip(v + 0.1 a, -1, 1)``, ``x' = x + 0.1 v'``; rewards are
    ``(v', 0.3 - 0.15 a^2)`` for 50 steps.
    """

    name = "pointmass-2"
    spec = MOMDPSpec(state_dim=2, action_dim=1, m=2, horizon=50, gamma=0.99,
                     low=(-1.0,), high=(1.0,))

    def dynamics(self, states, actions):
        x, v = states[:, 0], states[:, 1]
        a = actions[:, 0]
        v2 = np.clip(v + 0.1 * a, -1.0, 1.0)
        x2 = x + 0.1 * v2
        r = np.stack([v2, 0.3 - 0.15 * a * a], axis=1)
        return np.stack([x2, v2], axis=1), r


class PointMass3(MOEnv):
    """Planar point mass: x speed, y speed and an energy bonus.

    Each axis follows the 1-D dynamics; rewards are
    ``(vx', vy', 1 - 0.5 (ax^2 + ay^2))``.  State is ``(x, y, vx, vy)``.
    """

    name = "pointmass-3"
    spec = MOMDPSpec(state_dim=4, action_dim=2, m=3, horizon=50, gamma=0.99,
                     low=(-1.0, -1.0), high=(1.0, 1.0))

    def dynamics(self, states, actions):
        pos, vel = states[:, :2], states[:, 2:]
        vel2 = np.clip(vel + 0.1 * actions, -1.0, 1.0)
        pos2 = pos + 0.1 * vel2
        energy = 1.0 - 0.5 * (actions ** 2).sum(axis=1)
        r = np.column_stack([vel2, energy])
        return np.concatenate([pos2, vel2], axis=1), r


ENVIRONMENTS = {cls.name: cls for cls in (ConcaveBandit, PointMass2, PointMass3)}


def make_env(name: str) -> MOEnv:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise UnknownEnvironment(
            f"unknown environment {name!r}; valid: {', '.join(sorted(ENVIRONMENTS))}") from None


def reset(env: MOEnv, rng_seed=None) -> np.ndarray:
    return env.reset(rng_seed)


def step(env: MOEnv, state, action) -> Transition:
    return env.step(state, action)


def true_ccs(env: MOEnv):
    return env.true_ccs()


def rollout(env: MOEnv, action_fn, seed=None) -> list[Transition]:
    """Run one full episode, calling ``action_fn(state)`` each step."""
    s = env.reset(seed)
    out = []
    while True:
        tr = env.step(s, action_fn(s))
        out.append(tr)
        if tr.terminal:
            return out
        s = tr.next_state


def write_trace_csv(path, env: MOEnv, transitions) -> None:
    sd, ad, m = env.spec.state_dim, env.spec.action_dim, env.spec.m
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step"] + [f"s{i + 1}" for i in range(sd)]
                    + [f"a{i + 1}" for i in range(ad)] + [f"r{j + 1}" for j in range(m)])
        for t, tr in enumerate(transitions):
            wr.writerow([t] + [repr(float(x)) for x in tr.state]
                        + [repr(float(x)) for x in tr.action]
                        + [repr(float(x)) for x in tr.reward])
