"""Config files: sectioned JSON mapped onto the dataclass configs.

A config file is one JSON object with up to four sections (env, data,
train, eval). Every key must name a dataclass field of its section.
Omitted keys take the dataclass defaults, so an empty object is a valid
config, and every run writes back the fully resolved snapshot it ran
with.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

from .env import EnvConfig
from .errors import ConfigError, DataError
from .train import TrainConfig


@dataclass(frozen=True)
class DataGenConfig:
    sessions: int = 2000
    p_ad: float = 0.5523     # behavior policy's ad insertion probability

    def __post_init__(self):
        if self.sessions < 1:
            raise ConfigError(f"sessions must be positive, got {self.sessions}")
        if not 0.0 <= self.p_ad <= 1.0:
            raise ConfigError(f"p_ad must be in [0, 1], got {self.p_ad}")


@dataclass(frozen=True)
class EvalConfig:
    sessions: int = 500
    seed: int = 1000         # test-session stream, independent of training
    policy: str = "ram"      # ram | random | greedy

    def __post_init__(self):
        if self.sessions < 1:
            raise ConfigError(f"sessions must be positive, got {self.sessions}")
        if self.policy not in ("ram", "random", "greedy"):
            raise ConfigError(f"unknown policy {self.policy!r}")


@dataclass(frozen=True)
class FullConfig:
    env: EnvConfig = EnvConfig()
    data: DataGenConfig = DataGenConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()


_SECTIONS = {f.name: f.type for f in dataclasses.fields(FullConfig)}


def _build_section(cls, data: Mapping[str, Any], where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = [k for k in data if k not in fields]
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; "
                          f"valid keys are {sorted(fields)}")
    kwargs = {}
    for key, value in data.items():
        # JSON has no tuples; accept lists for tuple-typed fields
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: Mapping[str, Any], where: str = "config") -> FullConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: top level must be a JSON object")
    unknown = [k for k in raw if k not in _SECTIONS]
    if unknown:
        raise ConfigError(f"{where}: unknown sections {unknown}; "
                          f"valid sections are {sorted(_SECTIONS)}")
    sections = {}
    for name, cls in (("env", EnvConfig), ("data", DataGenConfig),
                      ("train", TrainConfig), ("eval", EvalConfig)):
        sections[name] = _build_section(cls, raw.get(name, {}),
                                        f"{where}[{name}]")
    return FullConfig(**sections)


def load_config(path: Optional[str]) -> FullConfig:
    """Resolved config from a JSON file; all defaults when path is None."""
    if path is None:
        return FullConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    return config_from_dict(raw, where=str(path))


def apply_overrides(cfg: FullConfig, **per_section: Mapping[str, Any]
                    ) -> FullConfig:
    """Rebuild the config with per-section field replacements, e.g.
    apply_overrides(cfg, train={"alpha": 1.0}, eval={"seed": 7})."""
    parts = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        changes = {k: v for k, v in per_section.get(name, {}).items()
                   if v is not None}
        parts[name] = dataclasses.replace(section, **changes) if changes \
            else section
    return FullConfig(**parts)


def config_to_dict(cfg: FullConfig) -> dict:
    raw = dataclasses.asdict(cfg)
    for section in raw.values():
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
    return raw


def write_snapshot(path, cfg: FullConfig, command: str) -> None:
    """The resolved-config record each command leaves in its output dir."""
    payload = {"command": command, **config_to_dict(cfg)}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_snapshot(path) -> tuple[str, FullConfig]:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config snapshot: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad snapshot: {exc}") from None
    command = raw.pop("command", "")
    return command, config_from_dict(raw, where=str(path))
