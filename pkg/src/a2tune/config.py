"""Experiment configuration: nested dataclasses round-tripped through YAML."""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from .actions import MODES, ActionGrid
from .actor_critic import ActorConfig
from .network import SyntheticNetworkConfig
from .reward import VARIANTS, TrainConfig
from .simulator import SimulatorConfig

BASELINES = ("default", "optimal", "expert", "actor-critic", "negative-slope")
INITS = ("random", "negative-slope")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Policy:
    """A closed-loop arm parsed from ``VARIANT[/mode][@init]`` or a baseline name."""

    name: str
    kind: str  # "default" | "optimal" | "expert" | "actor-critic" | "model"
    variant: str = "TAG-GCN"
    mode: str = "multi"
    init: str = "random"

    @classmethod
    def parse(cls, text: str) -> "Policy":
        text = text.strip()
        if text in ("default", "optimal", "expert", "actor-critic"):
            return cls(text, text)
        if text == "negative-slope":
            return cls(text, "model", init="negative-slope")
        body, _, init = text.partition("@")
        variant, _, mode = body.partition("/")
        mode = mode or "multi"
        init = init or "random"
        if variant not in VARIANTS:
            raise ConfigError(f"unknown policy {text!r}: variant must be one of {VARIANTS} or a baseline {BASELINES}")
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r} in policy {text!r}; choose from {MODES}")
        if init not in INITS:
            raise ConfigError(f"unknown init {init!r} in policy {text!r}; choose from {INITS}")
        return cls(text, "model", variant, mode, init)


@dataclass(frozen=True)
class ExperimentConfig:
    network: SyntheticNetworkConfig = SyntheticNetworkConfig()
    # directory with cells.csv/handover.csv; overrides the synthetic network
    data_dir: str | None = None
    tau: float = 10.0
    days: int = 10
    repeats: int = 5
    seed: int = 0
    policies: tuple[str, ...] = ("default", "optimal", "expert", "TAG-GCN")
    variants: tuple[str, ...] = VARIANTS
    nu: int = 3
    train: TrainConfig = TrainConfig(lr=1e-2, lambda_ratio=1e-2, lambda_thr=1e-2, group_dim=2, state_dim=4)
    simulator: SimulatorConfig = SimulatorConfig()
    grid: ActionGrid = ActionGrid()
    actor: ActorConfig = ActorConfig()
    expert_r1: float = -2.0
    expert_r2: float = -2.0
    phi: float = 5.0
    optimal_sweeps: int = 10
    freeze_after_day: int | None = None
    warm_start: bool = False
    mse_days: int = 12
    clusters: int = 5
    final_days: int = 4

    def __post_init__(self):
        if self.days < 3:
            raise ConfigError("days must be >= 3 (one training pair before the first recommendation)")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.mse_days < 4:
            raise ConfigError("mse_days must be >= 4")
        if self.nu < 1:
            raise ConfigError("nu must be >= 1")
        for p in self.policies:
            Policy.parse(p)
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if self.freeze_after_day is not None and self.freeze_after_day < 2:
            raise ConfigError("freeze_after_day must be >= 2")

    @property
    def parsed_policies(self) -> list[Policy]:
        return [Policy.parse(p) for p in self.policies]


def to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return from_dict(tp, value, where)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        inner = typing.get_args(tp)[0]
        return tuple(_coerce(inner, v, where) for v in value)
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if tp in (str, bool) and isinstance(value, tp):
        return value
    raise ConfigError(f"{where}: cannot use {value!r} as {getattr(tp, '__name__', tp)}")


def from_dict(cls, data: dict, where: str = "config"):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.init}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(ExperimentConfig, data, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=False)


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """``replace`` that skips None values (unset CLI flags)."""
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
