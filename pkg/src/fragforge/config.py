"""Run configuration: YAML parsing with defaults, overrides and strict key checking."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from fragforge.energy import AdapterConfig, CachedBackend, EnergyBackend, ExternalBackend, SurrogateBackend
from fragforge.neural.nn import EmbedderConfig
from fragforge.policy import PolicyConfig
from fragforge.trainer import PPOConfig


class ConfigError(ValueError):
    pass


@dataclass
class AdapterSettings:
    command: str = ""
    unit_factor: float = 627.509
    timeout: float = 600.0


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    PPO and network fields sit at the top level next to the run plumbing, so
    ``clip_epsilon: 0.3`` or ``--override hidden=64`` work without nesting.
    """

    manifest: str = ""
    backend: str = "surrogate"
    adapter: AdapterSettings = field(default_factory=AdapterSettings)
    start: str = "random"
    out_dir: str = "runs/default"
    # PPO
    clip_epsilon: float = 0.2
    grad_clip: float = 0.5
    gae_lambda: float = 0.97
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 5
    learning_rate: float = 3e-4
    gamma: float = 1.0
    minibatch_size: int = 100
    workers: int = 8
    total_steps: int = 50_000
    eval_interval: int = 1000
    eval_start: int = 100
    eval_samples: int = 10
    rollout_steps: int = 2048
    normalize_advantages: bool = True
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    reward_floor: float | None = -10.0
    seed: int = 0
    # networks
    hidden: int = 128
    depth: int = 2
    multiset_dim: int = 64
    sigma_d: float = 0.05
    sigma_phi: float = 0.2
    distance_range: list = field(default_factory=lambda: [1.10, 2.10])
    n_atom_basis: int = 64
    n_filters: int = 128
    n_interactions: int = 3
    cutoff: float = 5.0
    n_rbf: int = 64

    def ppo(self) -> PPOConfig:
        names = {f.name for f in fields(PPOConfig)}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        kw["adam_betas"] = tuple(self.adam_betas)
        return PPOConfig(**kw)

    def policy(self) -> PolicyConfig:
        emb = EmbedderConfig(self.n_atom_basis, self.n_filters, self.n_interactions, self.cutoff, self.n_rbf)
        return PolicyConfig(hidden=self.hidden, depth=self.depth, multiset_dim=self.multiset_dim,
                            embedder=emb, sigma_d=self.sigma_d, sigma_phi=self.sigma_phi,
                            distance_range=tuple(self.distance_range))

    def make_backend(self, cached: bool = True) -> EnergyBackend:
        if self.backend == "surrogate":
            inner = SurrogateBackend()
        elif self.backend == "external":
            if not self.adapter.command:
                raise ConfigError("external backend needs adapter.command")
            inner = ExternalBackend(AdapterConfig(self.adapter.command, self.adapter.unit_factor,
                                                  self.adapter.timeout))
        else:
            raise ConfigError(f"unknown backend {self.backend!r} (surrogate | external)")
        return CachedBackend(inner) if cached else inner

    def start_spec(self):
        return int(self.start) if str(self.start).lstrip("-").isdigit() else self.start

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FLOAT_LIST_LEN = {"adam_betas": 2, "distance_range": 2}


def _coerce(name: str, value: Any, default: Any, annotation: str):
    if name in _FLOAT_LIST_LEN:
        if not isinstance(value, (list, tuple)) or len(value) != _FLOAT_LIST_LEN[name]:
            raise ConfigError(f"{name}: expected a list of {_FLOAT_LIST_LEN[name]} numbers")
        return [_coerce(f"{name}[{i}]", v, 0.0, "float") for i, v in enumerate(value)]
    if value is None and "None" in annotation:
        return None
    if isinstance(default, bool) or annotation == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected true/false, got {value!r}")
    if annotation.startswith("int"):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if annotation.startswith("float"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if annotation == "str":
        if isinstance(value, (str, int)) and not isinstance(value, bool):
            return str(value)
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def _build(cls, data: dict, where: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    obj = cls()
    for key, value in data.items():
        f = known[key]
        default = getattr(obj, key)
        if dataclasses.is_dataclass(default):
            setattr(obj, key, _build(type(default), value or {}, f"{key}."))
        else:
            setattr(obj, key, _coerce(where + key, value, default, str(f.type)))
    return obj


def parse_config(text: str) -> RunConfig:
    """Parse YAML text; missing keys keep their defaults, unknown keys are rejected."""
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    cfg = _build(RunConfig, data or {})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.backend not in ("surrogate", "external"):
        raise ConfigError(f"unknown backend {cfg.backend!r} (surrogate | external)")
    for name in ("epochs", "minibatch_size", "workers", "rollout_steps", "eval_interval", "hidden"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.total_steps < 0:
        raise ConfigError("total_steps must be >= 0")
    lo, hi = cfg.distance_range
    if not 0 < lo < hi:
        raise ConfigError("distance_range must satisfy 0 < lo < hi")


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_config(p.read_text())
    if cfg.manifest and not Path(cfg.manifest).is_absolute():
        # manifest paths are relative to the config file; bare names may be bundled sets
        candidate = p.parent / cfg.manifest
        if candidate.exists() or "/" in cfg.manifest or cfg.manifest.endswith(".yaml"):
            cfg.manifest = str(candidate.resolve())
    return cfg


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key=value`` strings (values parsed as YAML scalars; dotted keys reach nested sections)."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        target = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                raise ConfigError(f"unknown config key: {key}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key: {key}")
        target[parts[-1]] = value
    out = _build(RunConfig, data)
    validate(out)
    return out
