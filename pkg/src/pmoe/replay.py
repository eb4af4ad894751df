"""Ring replay buffer with seeded uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class Transition:
    """One stored environment interaction."""

    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    done: bool


@dataclass(frozen=True)
class Batch:
    """A uniformly sampled minibatch, stacked into contiguous arrays."""

    observations: np.ndarray       # (B, obs_dim)
    actions: np.ndarray            # (B, act_dim)
    rewards: np.ndarray            # (B,)
    next_observations: np.ndarray  # (B, obs_dim)
    dones: np.ndarray              # (B,) 0/1 floats


class ReplayBuffer:
    """Fixed-capacity ring of transitions; sampling is uniform over the fill.

    Storage is struct-of-arrays so sampling is a single fancy-index per field.
    The generator is owned by the buffer, which makes draw order a pure
    function of the construction seed and the call sequence.
    """

    def __init__(self, capacity, obs_dim, act_dim, rng: np.random.Generator):
        if capacity < 1:
            raise ConfigError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._obs = np.zeros((self.capacity, obs_dim))
        self._act = np.zeros((self.capacity, act_dim))
        self._rew = np.zeros(self.capacity)
        self._next = np.zeros((self.capacity, obs_dim))
        self._done = np.zeros(self.capacity)
        self._rng = rng
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, observation, action, reward, next_observation, done):
        i = self._cursor
        self._obs[i] = observation
        self._act[i] = action
        self._rew[i] = reward
        self._next[i] = next_observation
        self._done[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def add_transition(self, t: Transition):
        self.add(t.observation, t.action, t.reward, t.next_observation, t.done)

    def sample(self, batch_size) -> Batch:
        if self._size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise UsageError(f"batch size must be >= 1, got {batch_size}")
        idx = self._rng.integers(0, self._size, size=batch_size)
        return Batch(observations=self._obs[idx], actions=self._act[idx],
                     rewards=self._rew[idx], next_observations=self._next[idx],
                     dones=self._done[idx])
