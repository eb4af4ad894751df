"""Trainer and run configuration with a lossless text round-trip."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

ALGORITHMS = ("pmoe-sac", "pmoe-ppo", "sac", "gating-sac", "gumbel-sac",
              "reinforce-sac")
MODES = ("bpa", "bpm")
ROUTERS = ("freq", "gumbel", "reinforce", "gating")
ENVIRONMENTS = ("reach", "bandit")

# Router choice is part of the algorithm tag; "sac" is the unimodal reference.
ROUTER_TO_ALGO = {"freq": "pmoe-sac", "gumbel": "gumbel-sac",
                  "reinforce": "reinforce-sac", "gating": "gating-sac"}


@dataclass
class TrainerConfig:
    """Everything a trainer needs; defaults are the off-policy settings."""

    algo: str = "pmoe-sac"
    k: int = 4
    alpha: float = 0.2
    mode: str = "bpm"
    seed: int = 0
    total_steps: int = 100_000
    episode_length: int = 1000
    batch_size: int = 100
    gamma: float = 0.99
    tau: float = 0.995
    lr_routing: float = 1e-3
    lr_primitive: float = 1e-3
    lr_critic: float = 1e-3
    target_interval: int = 1
    replay_capacity: int = 1_000_000
    warmup_steps: int = 1000
    hidden_actor: tuple = (256, 256)
    hidden_critic: tuple = (256, 256)
    gumbel_temperature: float = 1.0
    init_spread: float = 0.3
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    ppo_epochs: int = 20

    @classmethod
    def for_algo(cls, algo: str, **overrides) -> "TrainerConfig":
        """Family defaults: on-policy runs get the smaller nets and lr."""
        cfg = cls(algo=algo)
        if algo == "pmoe-ppo":
            cfg.lr_routing = cfg.lr_primitive = cfg.lr_critic = 3e-4
            cfg.batch_size = 64
            cfg.episode_length = 2000
            cfg.warmup_steps = 0
            cfg.hidden_actor = (64, 64)
            cfg.hidden_critic = (64, 64)
        if algo == "sac":
            cfg.k = 1
        for key, value in overrides.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown trainer option {key!r}")
            setattr(cfg, key, value)
        return cfg

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown primitive mode {self.mode!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.algo == "sac" and self.k != 1:
            raise ConfigError("the unimodal reference requires k = 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        for name in ("lr_routing", "lr_primitive", "lr_critic"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("total_steps", "episode_length", "batch_size",
                     "target_interval", "replay_capacity", "ppo_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.gumbel_temperature <= 0:
            raise ConfigError("gumbel_temperature must be > 0")
        if self.init_spread < 0:
            raise ConfigError("init_spread must be >= 0")
        if self.clip_ratio <= 0:
            raise ConfigError("clip_ratio must be > 0")
        if any(h < 1 for h in self.hidden_actor + self.hidden_critic):
            raise ConfigError("hidden layer widths must be >= 1")


@dataclass
class RunConfig:
    """TrainerConfig plus environment selection and harness plumbing."""

    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    env: str = "reach"
    n_obstacles: int = 3
    horizon: int = 200
    fixed_layout: bool = False
    out_dir: str = ""
    eval_interval: int = 5000
    eval_episodes: int = 20
    loss_interval: int = 500
    episode_log_interval: int = 1
    obs_noise: tuple = (0.0,)
    checkpoint_interval: int = 0
    export_trajectories: bool = True

    @classmethod
    def defaults(cls, algo="pmoe-sac", env="reach", **trainer_overrides):
        return cls(trainer=TrainerConfig.for_algo(algo, **trainer_overrides),
                   env=env)

    def validate(self):
        self.trainer.validate()
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.n_obstacles < 0:
            raise ConfigError("n_obstacles must be >= 0")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            raise ConfigError("intervals must be >= 0")
        if self.eval_episodes < 1 or self.loss_interval < 1:
            raise ConfigError("eval_episodes and loss_interval must be >= 1")
        if self.episode_log_interval < 1:
            raise ConfigError("episode_log_interval must be >= 1")
        if any(s < 0 for s in self.obs_noise):
            raise ConfigError("observation noise sigmas must be >= 0")


# ---------------------------------------------------------------------------
# Text round-trip. One `key = value` line per field; trainer fields are
# prefixed with "trainer.". Floats use repr so parsing is exact.
# ---------------------------------------------------------------------------


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw, template, key):
    try:
        if isinstance(template, bool):
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        if isinstance(template, tuple):
            elem = template[0] if template else 0.0
            if raw.strip() == "":
                return ()
            return tuple(type(elem)(part) for part in raw.split(","))
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for option {key!r}") from None


def serialize_config(config: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        if f.name == "trainer":
            continue
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    for f in dataclasses.fields(TrainerConfig):
        value = getattr(config.trainer, f.name)
        lines.append(f"trainer.{f.name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    run_fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    trainer_fields = {f.name: f for f in dataclasses.fields(TrainerConfig)}
    run_raw, trainer_raw = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key.startswith("trainer."):
            name = key[len("trainer."):]
            if name not in trainer_fields:
                raise ConfigError(f"unknown trainer option {name!r}")
            trainer_raw[name] = raw
        else:
            if key not in run_fields or key == "trainer":
                raise ConfigError(f"unknown option {key!r}")
            run_raw[key] = raw

    # Algorithm-family defaults first, explicit keys on top.
    algo = trainer_raw.pop("algo", "pmoe-sac")
    trainer = TrainerConfig.for_algo(algo)
    for name, raw in trainer_raw.items():
        template = getattr(trainer, name)
        setattr(trainer, name, _parse_value(raw, template, name))
    config = RunConfig(trainer=trainer)
    for name, raw in run_raw.items():
        template = getattr(config, name)
        setattr(config, name, _parse_value(raw, template, name))
    config.validate()
    return config


def save_config(config: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
