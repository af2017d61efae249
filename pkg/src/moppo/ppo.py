"""PPO for one weight-conditioned policy.

Rollouts run in ``num_envs`` lock-step lanes so the network is evaluated
on batches; lane segments are concatenated lane by lane into the buffer.
Advantages use GAE on the scalarised reward ``w . r`` with scalarised
values, while the critic regresses the per-objective lambda-returns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envs import MOEnv
from .neural import AdamState, adam_step
from .policy import WeightConditionedPolicy, gaussian_log_prob


class NaNDetected(FloatingPointError):
    pass


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    c1: float = 0.5
    c2: float = 0.0
    buffer_size: int = 2500
    num_envs: int = 1
    resample_every: int | None = None  # steps; None = once per episode

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip epsilon must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.minibatch < 1 or self.buffer_size < 1 or self.num_envs < 1:
            raise ValueError("minibatch, buffer_size and num_envs must be positive")
        if self.resample_every is not None and self.resample_every < 1:
            raise ValueError("resample_every must be positive")


class WeightSampler:
    """Uniform draws from a pool of conditioning vectors."""

    def __init__(self, pool: Sequence):
        self.pool = [np.asarray(getattr(w, "weights", w), dtype=float) for w in pool]
        if not self.pool:
            raise ValueError("empty weight pool")

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        return self.pool[int(rng.integers(len(self.pool)))]


@dataclass
class RolloutBuffer:
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    ws: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    cuts: np.ndarray  # last transition of a lane segment that did not end its episode
    episode_returns: list = field(default_factory=list)  # scalarised, completed episodes

    def __len__(self):
        return len(self.states)

    def clear(self):
        for name in ("states", "actions", "log_probs", "rewards", "values", "ws",
                     "next_states", "terminals", "cuts"):
            arr = getattr(self, name)
            setattr(self, name, arr[:0])
        self.episode_returns = []


def collect_rollouts(policy: WeightConditionedPolicy, env: MOEnv, sampler: Callable,
                     D: int, rng: np.random.Generator, weight_rng: np.random.Generator,
                     num_envs: int = 1, resample_every: int | None = None) -> RolloutBuffer:
    """Collect exactly ``D`` transitions.

    ``sampler(weight_rng)`` supplies a conditioning vector at the start of
    each episode and again every ``resample_every`` in-episode steps.
    """
    spec = env.spec
    n = max(1, min(num_envs, D))
    L = math.ceil(D / n)
    H = spec.horizon
    states = np.tile(env.initial_state(), (n, 1))
    t_ep = np.zeros(n, dtype=int)
    ws = np.stack([sampler(weight_rng) for _ in range(n)])
    ep_ret = np.zeros(n)

    shape = (L, n)
    S = np.empty(shape + (spec.state_dim,))
    A = np.empty(shape + (spec.action_dim,))
    LP = np.empty(shape)
    R = np.empty(shape + (spec.m,))
    V = np.empty(shape + (spec.m,))
    Wb = np.empty(shape + (spec.m,))
    NS = np.empty(shape + (spec.state_dim,))
    T = np.zeros(shape, dtype=bool)
    finished = [[] for _ in range(n)]

    for step in range(L):
        if resample_every is not None:
            for i in range(n):
                if t_ep[i] > 0 and t_ep[i] % resample_every == 0:
                    ws[i] = sampler(weight_rng)
        actions, logp, _, val = policy.act_batch(states, ws, rng)
        nxt, rew = env.dynamics(states, env.clip(actions))
        t_ep += 1
        done = t_ep >= H
        S[step], A[step], LP[step], R[step], V[step] = states, actions, logp, rew, val
        Wb[step], NS[step], T[step] = ws, nxt, done
        ep_ret += (rew * ws).sum(axis=1)
        states = nxt
        for i in np.flatnonzero(done):
            finished[i].append(ep_ret[i])
            ep_ret[i] = 0.0
            states[i] = env.initial_state()
            t_ep[i] = 0
            ws[i] = sampler(weight_rng)

    def flat(x):
        return np.swapaxes(x, 0, 1).reshape((n * L,) + x.shape[2:])[:D]

    cuts = np.zeros((n, L), dtype=bool)
    cuts[:, -1] = True
    cuts = cuts.reshape(-1)[:D]
    cuts[-1] = True
    terms = flat(T)
    cuts &= ~terms
    # episodes completed in the kept part of each lane
    kept = [max(0, min(L, D - i * L)) for i in range(n)]
    rets = []
    for i in range(n):
        lane_done = np.flatnonzero(T[:kept[i], i])
        rets.extend(finished[i][:len(lane_done)])
    return RolloutBuffer(flat(S), flat(A), flat(LP), flat(R), flat(V), flat(Wb),
                         flat(NS), terms, cuts, rets)


def gae(rewards, values, next_values, terminals, cuts, gamma: float, lam: float):
    """Generalised advantage estimates for scalar or vector rewards.

    ``terminals`` stop bootstrapping; ``cuts`` bootstrap from
    ``next_values`` but stop the backward recursion (segment boundary).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    term = np.asarray(terminals, dtype=float)
    cut = np.asarray(cuts, dtype=float)
    if rewards.ndim > 1:
        term = term[:, None]
        cut = cut[:, None]
    delta = rewards + gamma * (1.0 - term) * next_values - values
    adv = np.zeros_like(delta)
    running = np.zeros_like(delta[0])
    for t in range(len(delta) - 1, -1, -1):
        running = delta[t] + gamma * lam * (1.0 - term[t]) * (1.0 - cut[t]) * running
        adv[t] = running
    return adv


def compute_gae(buffer: RolloutBuffer, policy: WeightConditionedPolicy, gamma: float,
                lam: float, normalize: bool = True):
    """Scalar advantages and per-objective return targets for ``buffer``."""
    if len(buffer) == 0:
        raise ValueError("empty buffer")
    _, next_v, _ = policy.forward(buffer.next_states, buffer.ws)
    w = buffer.ws
    adv = gae((buffer.rewards * w).sum(1), (buffer.values * w).sum(1),
              (next_v * w).sum(1), buffer.terminals, buffer.cuts, gamma, lam)
    vec_adv = gae(buffer.rewards, buffer.values, next_v, buffer.terminals, buffer.cuts,
                  gamma, lam)
    returns = vec_adv + buffer.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def clipped_surrogate(ratio, adv, clip: float):
    """Per-sample ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)


def ppo_loss_and_grad(policy: WeightConditionedPolicy, states, ws, actions, old_log_probs,
                      adv, returns, config: PPOConfig):
    """Total PPO loss pieces and the flat parameter gradient on one batch."""
    B = len(states)
    mean, val, cache = policy.forward(states, ws)
    log_std = policy.clamped_log_std()
    std = np.exp(log_std)
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_log_probs)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - config.clip, 1 + config.clip) * adv
    surr = np.minimum(unclipped, clipped)
    actor_loss = -surr.mean()
    live = unclipped <= clipped
    d_logp = np.where(live, -adv * ratio / B, 0.0)

    diff = actions - mean
    g_mean = d_logp[:, None] * diff / std ** 2
    g_log_std = (d_logp[:, None] * ((diff / std) ** 2 - 1.0)).sum(axis=0)

    err = val - returns
    critic_loss = float((err ** 2).mean())
    g_val = config.c1 * 2.0 * err / err.size

    entropy = float((log_std + 0.5 + 0.5 * np.log(2 * np.pi)).sum())
    g_log_std = g_log_std - config.c2

    grad = policy.backward(cache, g_mean, g_val, g_log_std)
    stats = {
        "actor_loss": float(actor_loss),
        "critic_loss": critic_loss,
        "entropy": entropy,
        "loss": float(actor_loss + config.c1 * critic_loss - config.c2 * entropy),
        "clip_fraction": float((np.abs(ratio - 1.0) > config.clip).mean()),
    }
    return stats, grad


def ppo_update(policy: WeightConditionedPolicy, adam: AdamState, buffer: RolloutBuffer,
               adv, returns, config: PPOConfig, rng: np.random.Generator) -> dict:
    """Run ``epochs`` passes of shuffled minibatch Adam steps.

    On a non-finite loss or gradient the policy and optimiser state are
    restored to their pre-update values and :class:`NaNDetected` is raised.
    """
    saved = policy.get_params()
    saved_adam = AdamState(adam.m.copy(), adam.v.copy(), adam.t)
    n = len(buffer)
    totals = {"actor_loss": 0.0, "critic_loss": 0.0, "clip_fraction": 0.0}
    count = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = perm[start:start + config.minibatch]
            stats, grad = ppo_loss_and_grad(
                policy, buffer.states[idx], buffer.ws[idx], buffer.actions[idx],
                buffer.log_probs[idx], adv[idx], returns[idx], config)
            if not (np.isfinite(stats["loss"]) and np.all(np.isfinite(grad))):
                policy.set_params(saved)
                adam.m, adam.v, adam.t = saved_adam.m, saved_adam.v, saved_adam.t
                raise NaNDetected("non-finite PPO loss; update rolled back")
            policy.set_params(adam_step(policy.get_params(), grad, adam, config.lr))
            for k in totals:
                totals[k] += stats[k]
            count += 1
    return {k: v / count for k, v in totals.items()}


def train_iteration(policy, adam, env, sampler, config: PPOConfig,
                    rng: np.random.Generator, weight_rng: np.random.Generator) -> dict:
    """Collect one buffer, update, and clear it."""
    buf = collect_rollouts(policy, env, sampler, config.buffer_size, rng, weight_rng,
                           config.num_envs, config.resample_every)
    adv, ret = compute_gae(buf, policy, config.gamma, config.lam)
    if buf.episode_returns:
        mean_ret = float(np.mean(buf.episode_returns))
    else:
        mean_ret = float((buf.rewards * buf.ws).sum(1).mean() * env.spec.horizon)
    try:
        stats = ppo_update(policy, adam, buf, adv, ret, config, rng)
        stats["nan"] = False
    except NaNDetected:
        stats = {"actor_loss": float("nan"), "critic_loss": float("nan"),
                 "clip_fraction": float("nan"), "nan": True}
    buf.clear()
    stats["mean_return"] = mean_ret
    return stats
