"""Experiment configuration: a flat ``key = value`` file with ``#`` comments.

Unknown keys are rejected so that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .controller import PPOConfig

MODES = ("cms", "baseline")
_SECTION = "experiment"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # environment and loop
    map: str = "commons_default"
    n_agents: int = 10
    l: int = 1000
    t_max: int = 10_000_000
    n_y: int = 1000
    n_f: int = 2000
    n_c: int = 4000
    mode: str = "cms"
    seed: int = 0
    # controller
    gamma: float = 0.99
    clip_eps: float = 0.2
    c_pi: float = 1.0
    c_v: float = 0.5
    c_h: float = 0.01
    c_i: float = 0.1
    ppo_epochs: int = 5
    ppo_batch_size: int = 32
    ppo_lr: float = 1e-4
    normalize_advantages: bool = True
    horizon: int = 0  # 0: look ahead to the end of the buffer
    # social critic
    y_epochs: int = 10
    y_batch_size: int = 32
    y_lr: float = 5e-4
    f_epochs: int = 10
    f_batch_size: int = 32
    f_lr: float = 0.01
    # sensors
    pretrain_map: str = ""  # empty: same as map
    pretrain_steps: int = 128_000
    pretrain_agents: int = 10
    pretrain_epochs: int = 10
    pretrain_batch_size: int = 128
    pretrain_lr: float = 1e-3
    pretrain_seed: int = 0
    spectral_radius: float = 0.95
    dy_channels: int = 5
    # artifacts
    checkpoint_every: int = 0  # iterations; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.l < 1:
            raise ConfigError("l must be >= 1")
        if self.t_max < 0:
            raise ConfigError("t_max must be >= 0")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        for name in ("n_y", "n_f", "n_c"):
            v = getattr(self, name)
            if v < 1 or v % self.l:
                raise ConfigError(f"{name}={v} must be a positive multiple of l={self.l}")
        if not self.n_y <= self.n_f < self.n_c:
            raise ConfigError(f"schedules must satisfy n_y <= n_f < n_c, got {self.n_y}, {self.n_f}, {self.n_c}")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        try:
            self.ppo()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def effective_c_i(self) -> float:
        """The baseline system never weights the MI term."""
        return 0.0 if self.mode == "baseline" else self.c_i

    @property
    def iterations(self) -> int:
        return self.t_max // self.l

    @property
    def sensor_map(self) -> str:
        return self.pretrain_map or self.map

    def ppo(self) -> PPOConfig:
        return PPOConfig(
            gamma=self.gamma, clip_eps=self.clip_eps, c_pi=self.c_pi, c_v=self.c_v, c_h=self.c_h,
            c_i=self.effective_c_i, epochs=self.ppo_epochs, batch_size=self.ppo_batch_size, lr=self.ppo_lr,
            normalize_advantages=self.normalize_advantages, horizon=self.horizon or None,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def sensor_key(self) -> dict:
        """The settings that determine the pretrained sensors (used as a cache key)."""
        return {
            "map": self.sensor_map,
            "steps": self.pretrain_steps,
            "agents": self.pretrain_agents,
            "epochs": self.pretrain_epochs,
            "batch_size": self.pretrain_batch_size,
            "lr": self.pretrain_lr,
            "seed": self.pretrain_seed,
            "spectral_radius": self.spectral_radius,
            "dy_channels": self.dy_channels,
        }

    # -- text form -------------------------------------------------------

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(f"[{_SECTION}]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser.items(_SECTION):
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse(known[key], raw, parser, key)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(f, raw, parser, key):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            return parser.getboolean(_SECTION, key)
        if kind == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return raw.strip()


def builtin_config(name: str) -> Path:
    """Path of a config shipped with the package (``desk``, ``full``, ...)."""
    p = resources.files("coopmi") / "configs" / f"{name}.cfg"
    if not p.is_file():
        raise ConfigError(f"no built-in config named {name!r}")
    return Path(str(p))


def resolve_config(path_or_name, **overrides) -> ExperimentConfig:
    p = Path(path_or_name)
    if not p.exists():
        p = builtin_config(str(path_or_name))
    return ExperimentConfig.load(p, **overrides)
