"""Training environments: a 2-D target-reaching task and an analytic bandit.

Target reaching: an agent spawns at rest in the corner of a [-5, 5]^2
playground and must reach a randomly placed target disc while avoiding round
obstacles.  Actions are continuous accelerations in [-2, 2]^2 integrated
semi-implicitly (velocity first, then position) at dt = 0.1.  Rewards take
exactly three forms: 100 for reaching the target, -10 for colliding with an
edge or obstacle (which ends the episode), and the current speed otherwise,
which pays the agent for moving fast.

The bandit is a one-step task with a constant observation and reward
max(exp(-(a-2)^2), exp(-(a+2)^2)): two symmetric optima at a = +/-2, so the
optimal two-primitive routing split is exactly [0.5, 0.5] and estimator
behaviour can be checked against closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["EnvStep", "TargetReachingEnv", "BanditEnv", "make_env"]


@dataclass(frozen=True)
class EnvStep:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class TargetReachingEnv:
    """The 2-D reach-the-target task.

    Geometry defaults: reach radius 0.3, obstacle radius 0.3, agent radius
    0.1, horizon 200 steps.  The playground clamp keeps the agent inside
    [-5, 5]^2, but touching the boundary already counts as a collision.
    With fixed_layout=True the target and obstacles are sampled once (from the
    reset seed) and frozen for every later reset.
    """

    HALF = 5.0
    SPAWN = np.array([-4.5, -4.5])
    DT = 0.1
    SPEED_LIMIT = 2.0
    ACCEL_LIMIT = 2.0
    REACH_RADIUS = 0.3
    OBSTACLE_RADIUS = 0.3
    AGENT_RADIUS = 0.1

    def __init__(self, n_obstacles=3, horizon=200, fixed_layout=False, seed=0):
        if n_obstacles < 0:
            raise ConfigError(f"obstacle count must be >= 0, got {n_obstacles}")
        self.n_obstacles = n_obstacles
        self.horizon = horizon
        self.fixed_layout = fixed_layout
        self.obs_dim = 2 * n_obstacles + 6
        self.act_dim = 2
        self.action_bound = self.ACCEL_LIMIT
        self._rng = np.random.default_rng(seed)
        self._layout = None
        self.reset(seed)

    # -- layout sampling ------------------------------------------------------

    def _sample_layout(self):
        target = self._rng.uniform(0.0, 3.0, size=2)
        obstacles = np.zeros((self.n_obstacles, 2))
        for i in range(self.n_obstacles):
            while True:
                p = self._rng.normal(0.0, 3.0, size=2)
                if np.any(np.abs(p) > self.HALF):
                    continue
                # No overlap with the spawn point or the target disc.
                if np.linalg.norm(p - self.SPAWN) <= (self.OBSTACLE_RADIUS
                                                      + self.AGENT_RADIUS):
                    continue
                if np.linalg.norm(p - target) <= (self.OBSTACLE_RADIUS
                                                  + self.REACH_RADIUS):
                    continue
                obstacles[i] = p
                break
        return target, obstacles

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
            self._layout = None
        if self.fixed_layout:
            if self._layout is None:
                self._layout = self._sample_layout()
            self.target, self.obstacles = self._layout
        else:
            self.target, self.obstacles = self._sample_layout()
        self.pos = self.SPAWN.copy()
        self.vel = np.zeros(2)
        self.last_action = np.zeros(2)
        self.steps = 0
        return self._observe()

    def _observe(self) -> np.ndarray:
        rel_target = self.target - self.pos
        rel_obstacles = (self.obstacles - self.pos).reshape(-1)
        return np.concatenate([rel_target, rel_obstacles, self.last_action,
                               self.vel])

    # -- dynamics --------------------------------------------------------------

    def step(self, action) -> EnvStep:
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(2),
                         -self.ACCEL_LIMIT, self.ACCEL_LIMIT)
        self.vel = np.clip(self.vel + action * self.DT,
                           -self.SPEED_LIMIT, self.SPEED_LIMIT)
        self.pos = self.pos + self.vel * self.DT
        self.last_action = action
        self.steps += 1

        hit_edge = bool(np.any(np.abs(self.pos) > self.HALF - self.AGENT_RADIUS))
        self.pos = np.clip(self.pos, -self.HALF, self.HALF)
        reached = bool(np.linalg.norm(self.pos - self.target) <= self.REACH_RADIUS)
        hit_obstacle = bool(self.n_obstacles and np.any(
            np.linalg.norm(self.obstacles - self.pos, axis=1)
            <= self.OBSTACLE_RADIUS + self.AGENT_RADIUS))
        collided = hit_edge or hit_obstacle

        if reached:
            reward, done = 100.0, True
        elif collided:
            reward, done = -10.0, True
        else:
            reward, done = float(np.linalg.norm(self.vel)), False
        truncated = not done and self.steps >= self.horizon
        info = {"reached": reached, "collision": collided, "truncated": truncated,
                "position": self.pos.copy(), "velocity": self.vel.copy()}
        return EnvStep(observation=self._observe(), reward=reward,
                       done=done or truncated, info=info)


class BanditEnv:
    """One-step bimodal bandit with reward max(exp(-(a-2)^2), exp(-(a+2)^2)).

    The observation is the constant vector [1.0] so policy heads see a
    non-degenerate input; actions are scalars in [-4, 4].
    """

    def __init__(self, seed=0):
        self.obs_dim = 1
        self.act_dim = 1
        self.action_bound = 4.0
        self.horizon = 1

    def reset(self, seed=None) -> np.ndarray:
        return np.ones(1)

    def step(self, action) -> EnvStep:
        a = float(np.clip(np.asarray(action).reshape(()), -self.action_bound,
                          self.action_bound))
        reward = float(max(np.exp(-(a - 2.0) ** 2), np.exp(-(a + 2.0) ** 2)))
        return EnvStep(observation=np.ones(1), reward=reward, done=True,
                       info={"reached": False, "collision": False,
                             "truncated": False})


def make_env(name, n_obstacles=3, horizon=200, fixed_layout=False, seed=0):
    """Factory keyed by environment name: 'reach' or 'bandit'."""
    if name == "reach":
        return TargetReachingEnv(n_obstacles=n_obstacles, horizon=horizon,
                                 fixed_layout=fixed_layout, seed=seed)
    if name == "bandit":
        return BanditEnv(seed=seed)
    raise ConfigError(f"unknown environment {name!r}")
