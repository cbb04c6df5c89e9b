"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment. Plain keys address training
and environment fields (reward weights included); ``cei.<field>`` and
``social_forces.<field>`` address the pedestrian model and the baseline.
Values are Python literals: numbers, ``true``/``false``, or tuples such as
``0.6, 0.9``.
"""

from __future__ import annotations

import ast
from dataclasses import fields, replace
from pathlib import Path

from .cei import CeiParams
from .env import EnvConfig, RewardWeights
from .social_forces import SocialForcesParams
from .train import TrainConfig

TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "jobs")
ENV_KEYS = ("dt", "max_steps", "threshold_range", "spawn_offset_range", "eval_threshold_range", "eval_extra_offset_range", "goal_margin")
REWARD_KEYS = tuple(f.name for f in fields(RewardWeights))
CEI_KEYS = tuple(f.name for f in fields(CeiParams) if f.name not in ("geometry", "risk_threshold"))
SF_KEYS = tuple(f.name for f in fields(SocialForcesParams))
GEOMETRY_KEYS = ("length", "width", "agent_radius")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = parse_value(value)
    return values


def read_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def _coerce(value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"expected a comma-separated tuple, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"expected a name, got {value!r}")
    return value


def build_configs(values: dict, base_train: TrainConfig = TrainConfig(), base_env: EnvConfig = EnvConfig()):
    """Apply flat settings on top of defaults; returns ``(TrainConfig, EnvConfig)``."""
    train_kw, env_kw, reward_kw, cei_kw, sf_kw, geo_kw = {}, {}, {}, {}, {}, {}
    for key, value in values.items():
        try:
            if key in TRAIN_KEYS:
                train_kw[key] = _coerce(value, getattr(base_train, key))
            elif key in ENV_KEYS:
                env_kw[key] = _coerce(value, getattr(base_env, key))
            elif key in REWARD_KEYS:
                reward_kw[key] = _coerce(value, getattr(base_env.rewards, key))
            elif key in GEOMETRY_KEYS:
                geo_kw[key] = _coerce(value, getattr(base_env.geometry, key))
            elif key.startswith("cei.") and key[4:] in CEI_KEYS:
                cei_kw[key[4:]] = _coerce(value, getattr(base_env.cei, key[4:]))
            elif key.startswith("social_forces.") and key[14:] in SF_KEYS:
                sf_kw[key[14:]] = _coerce(value, getattr(base_env.social_forces, key[14:]))
            else:
                raise ConfigError("unknown key")
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    try:
        train = replace(base_train, **train_kw)
        geometry = replace(base_env.geometry, **geo_kw)
        env = replace(
            base_env,
            geometry=geometry,
            rewards=replace(base_env.rewards, **reward_kw),
            cei=replace(base_env.cei, geometry=geometry, **cei_kw),
            social_forces=replace(base_env.social_forces, **sf_kw),
            **env_kw,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return train, env


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def resolved_items(train: TrainConfig, env: EnvConfig) -> list[tuple[str, object]]:
    """Every configurable key with its effective value, in a stable order."""
    items = [(k, getattr(train, k)) for k in TRAIN_KEYS]
    items += [(k, getattr(env, k)) for k in ENV_KEYS]
    items += [(k, getattr(env.rewards, k)) for k in REWARD_KEYS]
    items += [(k, getattr(env.geometry, k)) for k in GEOMETRY_KEYS]
    items += [(f"cei.{k}", getattr(env.cei, k)) for k in CEI_KEYS]
    items += [(f"social_forces.{k}", getattr(env.social_forces, k)) for k in SF_KEYS]
    return items


def format_config(train: TrainConfig, env: EnvConfig, header: dict | None = None) -> str:
    lines = [f"# {k}: {_format_value(v)}" for k, v in (header or {}).items()]
    lines += [f"{k} = {_format_value(v)}" for k, v in resolved_items(train, env)]
    return "\n".join(lines) + "\n"
