"""Experiment configuration: defaults, flat key-value file I/O, validation.

Defaults follow the training setup used throughout: 2 agents, discount 0.99,
memory length 3, 32-step episodes, 250 episodes per lifetime, lambda 1,
policy / intrinsic learning rates 3e-4 / 7e-4, hidden sizes 64 / 128.
``buffer_size`` (the number of packets each agent must deliver) has no
default and must be given explicitly.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


class RunMode(str, enum.Enum):
    PROPOSED = "proposed"
    EXTRINSIC_NPS = "extrinsic-nps"
    EXTRINSIC_PS = "extrinsic-ps"
    RANDOM_UNIFORM = "random-uniform"


def _parse_mode(value: str) -> RunMode:
    key = value.strip().lower().replace("_", "-")
    for mode in RunMode:
        if mode.value == key:
            return mode
    raise ConfigError(f"unknown mode {value!r}; expected one of "
                      f"{[m.value for m in RunMode]}")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a training run, serialized with every run directory."""

    buffer_size: int | None = None          # packets per agent; required
    mode: RunMode = RunMode.PROPOSED
    n_agents: int = 2
    memory_len: int = 3                     # observation history depth
    episode_len: int = 32                   # steps per episode
    episodes_per_lifetime: int = 250
    max_lifetimes: int = 400
    discount: float = 0.99
    intrinsic_weight: float = 1.0           # balance of intrinsic vs extrinsic
    policy_lr: float = 3e-4
    intrinsic_lr: float = 7e-4
    policy_hidden: tuple[int, ...] = (64, 64)
    intrinsic_hidden: int = 128
    init_scale: float = 1.0                 # multiplier on fan-based bounds
    seeds: tuple[int, ...] = ()
    # behavioral knobs
    reward_duplicates: bool = False
    strict_obs_indexing: bool = False
    optimizer: str = "sgd"                  # sgd | adam
    policy_clip: float = 0.0                # global-norm clip; 0 disables
    intrinsic_clip: float = 5.0             # global-norm clip; 0 disables
    bptt_window: str = "episode"            # episode | lifetime
    credit: str = "whole_episode"           # whole_episode | to_go
    intrinsic_sees_rext: bool = False
    intrinsic_head_activation: str = "identity"  # identity | tanh
    convergence_window: int = 3
    convergence_threshold: float = 0.01
    convergence_stop: bool = True
    workers: int = 1
    eval_seed: int = 7777

    def __post_init__(self) -> None:
        _validate(self)

    def require_buffer_size(self) -> int:
        if self.buffer_size is None:
            raise ConfigError("buffer_size must be set explicitly "
                              "(config key 'buffer_size' or CLI --p)")
        return self.buffer_size

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def steps_per_lifetime(self) -> int:
        return self.episodes_per_lifetime * self.episode_len

    def to_text(self) -> str:
        lines = []
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            lines.append(f"{field.name} = {_format_value(value)}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_INT_FIELDS = {"buffer_size", "n_agents", "memory_len", "episode_len",
               "episodes_per_lifetime", "max_lifetimes", "intrinsic_hidden",
               "convergence_window", "workers", "eval_seed"}
_FLOAT_FIELDS = {"discount", "intrinsic_weight", "policy_lr", "intrinsic_lr",
                 "policy_clip", "intrinsic_clip", "convergence_threshold",
                 "init_scale"}
_BOOL_FIELDS = {"reward_duplicates", "strict_obs_indexing",
                "intrinsic_sees_rext", "convergence_stop"}
_INT_TUPLE_FIELDS = {"policy_hidden", "seeds"}
_STR_FIELDS = {"optimizer", "bptt_window", "credit",
               "intrinsic_head_activation"}

_KNOWN_KEYS = (_INT_FIELDS | _FLOAT_FIELDS | _BOOL_FIELDS
               | _INT_TUPLE_FIELDS | _STR_FIELDS | {"mode"})


def _format_value(value) -> str:
    if isinstance(value, RunMode):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "mode":
            return _parse_mode(raw)
        if key in _INT_FIELDS:
            if raw == "" and key == "buffer_size":
                return None
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        if key in _BOOL_FIELDS:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key in _INT_TUPLE_FIELDS:
            if raw == "":
                return ()
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def _validate(cfg: ExperimentConfig) -> None:
    def check(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    if cfg.buffer_size is not None:
        check(cfg.buffer_size >= 1, "buffer_size must be >= 1")
    check(cfg.n_agents >= 1, "n_agents must be >= 1")
    check(cfg.memory_len >= 1, "memory_len must be >= 1")
    check(cfg.episode_len >= 1, "episode_len must be >= 1")
    check(cfg.episodes_per_lifetime >= 1, "episodes_per_lifetime must be >= 1")
    check(cfg.max_lifetimes >= 1, "max_lifetimes must be >= 1")
    check(0.0 < cfg.discount <= 1.0, "discount must be in (0, 1]")
    check(0.0 <= cfg.intrinsic_weight <= 1.0,
          "intrinsic_weight must be in [0, 1]")
    check(cfg.policy_lr >= 0.0, "policy_lr must be >= 0")
    check(cfg.init_scale > 0.0, "init_scale must be > 0")
    check(cfg.intrinsic_lr >= 0.0, "intrinsic_lr must be >= 0")
    check(len(cfg.policy_hidden) >= 1 and all(h >= 1 for h in cfg.policy_hidden),
          "policy_hidden must be one or more sizes >= 1")
    check(cfg.intrinsic_hidden >= 1, "intrinsic_hidden must be >= 1")
    check(cfg.optimizer in ("sgd", "adam"),
          f"optimizer must be sgd or adam, got {cfg.optimizer!r}")
    check(cfg.policy_clip >= 0.0, "policy_clip must be >= 0 (0 disables)")
    check(cfg.intrinsic_clip >= 0.0,
          "intrinsic_clip must be >= 0 (0 disables)")
    check(cfg.bptt_window in ("episode", "lifetime"),
          f"bptt_window must be episode or lifetime, got {cfg.bptt_window!r}")
    check(cfg.credit in ("whole_episode", "to_go"),
          f"credit must be whole_episode or to_go, got {cfg.credit!r}")
    check(cfg.intrinsic_head_activation in ("identity", "tanh"),
          "intrinsic_head_activation must be identity or tanh")
    check(cfg.convergence_window >= 1, "convergence_window must be >= 1")
    check(cfg.convergence_threshold >= 0.0,
          "convergence_threshold must be >= 0")
    check(cfg.workers >= 1, "workers must be >= 1")
    check(all(s >= 0 for s in cfg.seeds), "seeds must be non-negative")
    check(isinstance(cfg.mode, RunMode), "mode must be a RunMode")


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a flat key-value config file and merge it over the defaults."""
    return parse_config_text(Path(path).read_text())


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_text())
