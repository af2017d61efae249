"""Actor-critic conditioned on a scalarisation vector.

A shared tanh trunk reads ``[state, w]``.  Its last hidden layer is
concatenated with ``w`` again (residual conditioning) and fed to two
linear heads: Gaussian action means and an ``m``-dimensional value.
Exploration noise comes from a state-independent learned ``log_std``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import Checkpoint, DenseNet, DimensionMismatch, param_count

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ActionSample:
    action: np.ndarray
    log_prob: float
    mean: np.ndarray
    std: np.ndarray


def gaussian_log_prob(actions, mean, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (actions - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(axis=-1)


class WeightConditionedPolicy:
    def __init__(self, state_dim: int, action_dim: int, m: int, trunk: DenseNet,
                 actor: DenseNet, critic: DenseNet, log_std: np.ndarray):
        self.state_dim, self.action_dim, self.m = state_dim, action_dim, m
        self.trunk, self.actor, self.critic = trunk, actor, critic
        self.log_std = np.asarray(log_std, dtype=float)

    @classmethod
    def init(cls, state_dim, action_dim, m, rng: np.random.Generator,
             hidden=(64, 64)) -> "WeightConditionedPolicy":
        hidden = list(hidden)
        trunk = DenseNet.init([state_dim + m] + hidden, rng, tanh_output=True)
        head_in = hidden[-1] + m
        # small action-head gain keeps initial means near zero
        actor = DenseNet.init([head_in, action_dim], rng, gains=[0.01])
        critic = DenseNet.init([head_in, m], rng)
        return cls(state_dim, action_dim, m, trunk, actor, critic, np.zeros(action_dim))

    # flat parameter vector: trunk | actor | critic | log_std
    @property
    def sizes(self):
        return (self.trunk.params.size, self.actor.params.size,
                self.critic.params.size, self.log_std.size)

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.trunk.params, self.actor.params,
                               self.critic.params, self.log_std])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        a, b, c, d = np.cumsum(self.sizes)
        if flat.size != d:
            raise DimensionMismatch(f"expected {d} parameters, got {flat.size}")
        self.trunk.params = flat[:a].copy()
        self.actor.params = flat[a:b].copy()
        self.critic.params = flat[b:c].copy()
        self.log_std = flat[c:d].copy()

    def copy(self) -> "WeightConditionedPolicy":
        p = WeightConditionedPolicy(
            self.state_dim, self.action_dim, self.m,
            DenseNet(self.trunk.widths, self.trunk.params.copy(), tanh_output=True),
            DenseNet(self.actor.widths, self.actor.params.copy()),
            DenseNet(self.critic.widths, self.critic.params.copy()),
            self.log_std.copy())
        return p

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def _inputs(self, states, ws):
        S = np.atleast_2d(np.asarray(states, dtype=float))
        W = np.atleast_2d(np.asarray(ws, dtype=float))
        if W.shape[1] != self.m:
            raise DimensionMismatch(f"w has {W.shape[1]} components, expected {self.m}")
        if S.shape[1] != self.state_dim:
            raise DimensionMismatch(f"state has {S.shape[1]} components, expected {self.state_dim}")
        if len(W) == 1 and len(S) > 1:
            W = np.broadcast_to(W, (len(S), self.m))
        return S, W

    def forward(self, states, ws):
        """Batched ``(means, values, cache)`` for rows of states and weights."""
        S, W = self._inputs(states, ws)
        h, tcache = self.trunk.forward(np.concatenate([S, W], axis=1))
        hw = np.concatenate([h, W], axis=1)
        mean, acache = self.actor.forward(hw)
        val, ccache = self.critic.forward(hw)
        return mean, val, (tcache, acache, ccache, h.shape[1])

    def backward(self, cache, mean_grad, value_grad, log_std_grad) -> np.ndarray:
        """Flat parameter gradient given dLoss/dmean, dLoss/dvalue, dLoss/dlog_std."""
        tcache, acache, ccache, hdim = cache
        ga, gin_a = self.actor.backward(acache, mean_grad)
        gc, gin_c = self.critic.backward(ccache, value_grad)
        gh = gin_a[:, :hdim] + gin_c[:, :hdim]
        gt, _ = self.trunk.backward(tcache, gh)
        gls = np.where((self.log_std > LOG_STD_MIN) & (self.log_std < LOG_STD_MAX),
                       log_std_grad, 0.0)
        return np.concatenate([gt, ga, gc, gls])

    def act(self, state, w, rng: np.random.Generator) -> ActionSample:
        mean, _, _ = self.forward(state, w)
        mean = mean[0]
        log_std = self.clamped_log_std()
        std = np.exp(log_std)
        action = mean + std * rng.standard_normal(self.action_dim)
        lp = float(gaussian_log_prob(action, mean, log_std))
        return ActionSample(action, lp, mean, std)

    def act_batch(self, states, ws, rng: np.random.Generator):
        mean, val, _ = self.forward(states, ws)
        log_std = self.clamped_log_std()
        actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return actions, gaussian_log_prob(actions, mean, log_std), mean, val

    def mean_action(self, states, ws) -> np.ndarray:
        return self.forward(states, ws)[0]

    def value(self, state, w) -> np.ndarray:
        _, val, _ = self.forward(state, w)
        return val[0] if np.asarray(state).ndim == 1 else val

    def log_prob(self, states, ws, actions) -> np.ndarray:
        mean, _, _ = self.forward(states, ws)
        return gaussian_log_prob(np.atleast_2d(actions), mean, self.clamped_log_std())

    # checkpoints -----------------------------------------------------------

    def to_checkpoint(self, **extra) -> Checkpoint:
        header = {
            "format": "moppo-policy-1",
            "state_dim": self.state_dim, "action_dim": self.action_dim, "m": self.m,
            "trunk_widths": ",".join(map(str, self.trunk.widths)),
            "actor_widths": ",".join(map(str, self.actor.widths)),
            "critic_widths": ",".join(map(str, self.critic.widths)),
        }
        header.update(extra)
        return Checkpoint(header, self.get_params())

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "WeightConditionedPolicy":
        h = ck.header

        def widths(key):
            return [int(x) for x in h[key].split(",")]

        tw, aw, cw = widths("trunk_widths"), widths("actor_widths"), widths("critic_widths")
        policy = cls(
            int(h["state_dim"]), int(h["action_dim"]), int(h["m"]),
            DenseNet.zeros(tw, tanh_output=True), DenseNet.zeros(aw), DenseNet.zeros(cw),
            np.zeros(int(h["action_dim"])))
        expected = param_count(tw) + param_count(aw) + param_count(cw) + int(h["action_dim"])
        if ck.params.size != expected:
            raise DimensionMismatch("checkpoint parameter count does not match header")
        policy.set_params(ck.params)
        return policy


def scalarise(v, w) -> float:
    """Linear utility ``w . v``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(getattr(w, "weights", w), dtype=float)
    if v.shape != w.shape:
        raise DimensionMismatch(f"value {v.shape} and weights {w.shape} differ")
    return float(v @ w)
