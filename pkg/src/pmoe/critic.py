"""Q-value and state-value learning.

Off-policy training uses twin Q-networks over concat(state, action) with
Polyak-averaged target copies and the clipped-double-Q backup: targets
bootstrap from min(Q_A, Q_B) of the target nets at a freshly sampled next
action, minus the entropy temperature times its log-density.  Targets are
computed eagerly (never on a tape), so they are constants by construction.

On-policy training uses a small state-value head and generalized advantage
estimation; the recursion here returns raw advantages, normalization is the
trainer's decision.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, UsageError

__all__ = ["TwinCritic", "ValueHead", "bellman_target", "critic_loss",
           "polyak_update", "gae_advantages"]


class TwinCritic:
    """Two Q-networks plus their Polyak-averaged target copies."""

    def __init__(self, obs_dim, act_dim, hidden=(256, 256), seed=0, tau=0.995,
                 name="critic"):
        if not 0.0 < tau < 1.0:
            raise ConfigError(f"polyak coefficient must lie in (0,1), got {tau}")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.tau = tau
        self.name = name
        sizes = [obs_dim + act_dim, *hidden, 1]
        acts = ["relu"] * len(hidden) + ["identity"]
        self.qa = ad.Mlp.build(sizes, acts, ad.init_rng(seed, f"{name}.qa"),
                               name=f"{name}.qa")
        self.qb = ad.Mlp.build(sizes, acts, ad.init_rng(seed, f"{name}.qb"),
                               name=f"{name}.qb")
        # Targets start as exact copies of the online networks.
        self.qa_target = self.qa.copy(name=f"{name}.qa_target")
        self.qb_target = self.qb.copy(name=f"{name}.qb_target")

    def arrays(self) -> dict:
        return {**self.qa.arrays(), **self.qb.arrays(),
                **self.qa_target.arrays(), **self.qb_target.arrays()}

    def online_arrays(self) -> dict:
        return {**self.qa.arrays(), **self.qb.arrays()}

    def load_arrays(self, arrays: dict):
        for net in (self.qa, self.qb, self.qa_target, self.qb_target):
            net.load_arrays(arrays)

    def q_pair(self, states, actions, tape, frozen=False):
        """Both online Q estimates, shape (N,) each."""
        x = ad.concat([ad.as_tensor(np.atleast_2d(states)), ad.as_tensor(actions)],
                      axis=-1)
        qa = ad.forward(self.qa, x, tape, frozen=frozen)
        qb = ad.forward(self.qb, x, tape, frozen=frozen)
        n = qa.shape[0]
        return ad.reshape(qa, (n,)), ad.reshape(qb, (n,))

    def q_min(self, states, actions, tape, frozen=False) -> Tensor:
        """min(Q_A, Q_B) of the online networks, differentiable through actions."""
        qa, qb = self.q_pair(states, actions, tape, frozen=frozen)
        return ad.minimum(qa, qb)

    def target_q_min(self, states, actions) -> np.ndarray:
        """min over the target twins, computed eagerly (no gradient anywhere)."""
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=-1)
        qa = ad.forward(self.qa_target, x, None).data[:, 0]
        qb = ad.forward(self.qb_target, x, None).data[:, 0]
        return np.minimum(qa, qb)

    def polyak(self):
        polyak_update(self.qa.arrays(), self.qa_target.arrays(), self.tau)
        polyak_update(self.qb.arrays(), self.qb_target.arrays(), self.tau)


def bellman_target(rewards, dones, next_q_min, next_log_prob, gamma,
                   alpha=0.0) -> np.ndarray:
    """y = r + gamma * (1 - done) * (min target Q - alpha * log pi(a'|s')).

    All inputs are plain arrays; the result is a constant target by
    construction.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    next_q_min = np.asarray(next_q_min, dtype=np.float64)
    soft = next_q_min - alpha * np.asarray(next_log_prob, dtype=np.float64)
    return rewards + gamma * (1.0 - dones) * soft


def critic_loss(critic: TwinCritic, states, actions, targets, tape) -> Tensor:
    """Mean of the two twins' squared errors against the shared targets."""
    targets = np.asarray(targets, dtype=np.float64)
    qa, qb = critic.q_pair(states, actions, tape)
    mse_a = ad.tmean(ad.square(ad.sub(qa, targets)))
    mse_b = ad.tmean(ad.square(ad.sub(qb, targets)))
    return ad.mul(ad.add(mse_a, mse_b), 0.5)


def polyak_update(online: dict, target: dict, tau):
    """target <- tau * target + (1 - tau) * online, elementwise in place.

    The dicts are matched positionally (both come from structurally identical
    networks whose arrays() iterate layers in the same order).
    """
    if len(online) != len(target):
        raise UsageError("online and target parameter sets differ in size")
    for src, dst in zip(online.values(), target.values()):
        if src.shape != dst.shape:
            raise UsageError("online and target parameter shapes differ")
        dst *= tau
        dst += (1.0 - tau) * src


class ValueHead:
    """State-value network for advantage estimation."""

    def __init__(self, obs_dim, hidden=(64, 64), seed=0, name="value"):
        sizes = [obs_dim, *hidden, 1]
        acts = ["tanh"] * len(hidden) + ["identity"]
        self.net = ad.Mlp.build(sizes, acts, ad.init_rng(seed, name), name=name)
        self.name = name

    def arrays(self) -> dict:
        return self.net.arrays()

    def load_arrays(self, arrays: dict):
        self.net.load_arrays(arrays)

    def values(self, states, tape) -> Tensor:
        v = ad.forward(self.net, np.atleast_2d(states), tape)
        return ad.reshape(v, (v.shape[0],))


def gae_advantages(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimation over one rollout segment.

    dones marks true terminations (no bootstrap past them); last_value
    bootstraps the final transition when the segment was truncated mid-episode.
    Returns raw (unnormalized) advantages and the matching value targets
    advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise UsageError("rewards, values and dones must have identical lengths")
    t = rewards.shape[0]
    next_values = np.append(values[1:], float(last_value))
    deltas = rewards + gamma * (1.0 - dones) * next_values - values
    advantages = np.zeros(t)
    acc = 0.0
    for i in range(t - 1, -1, -1):
        acc = deltas[i] + gamma * lam * (1.0 - dones[i]) * acc
        advantages[i] = acc
    return advantages, advantages + values
