"""Experiment configuration: a YAML file with strict keys and documented defaults.

Example::

    network: 2lln              # builtin name, path to a YAML/JSON file, or an inline mapping
    arrival: exponential       # one family for all classes, or a list per class
    service: exponential
    policy: {c1: 1.0, c2: 2.0, kappa: 0.2}
    r_grid: [4, 8, 16, 32]
    replications: 64
    T: 200.0                   # ergodic horizon, scaled time
    varsigma: 1.0              # discount rate (converge-discounted)
    discount_tol: 1.0e-4       # relative truncation tolerance for discounted costs
    q0: [0, 0, 0]              # initial queue (unscaled), default empty
    hgi: {dt: 1.0e-3, T: 5000.0, replications: 8, burn_in: 0.2}
    seed: 0
    jobs: 1
    out: results
    mode: converge-ergodic

All horizons are in scaled (diffusion) time; the engine multiplies by r**2.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .distributions import DistributionSpec
from .model import NetworkSpec, two_link_linear_network

__all__ = ["ConfigError", "PolicyParams", "HgiParams", "ExperimentConfig", "MODES", "load_config",
           "builtin_network"]

MODES = ("converge-ergodic", "converge-discounted", "single-run", "hgi-only", "validate")


class ConfigError(ValueError):
    pass


def builtin_network(name: str) -> NetworkSpec:
    if name == "2lln":
        return two_link_linear_network()
    if name == "2lln-trivial":
        return two_link_linear_network(h=(1.0, 1.0, 2.0))
    if name == "single":
        return NetworkSpec(K=[[1]], C=[1.0], alpha=[1.0], beta=[1.0], alpha_bar=[0.0], beta_bar=[1.0],
                           sigma_u=[1.0], sigma_v=[1.0], h=[1.0])
    raise ConfigError(f"unknown builtin network {name!r} (choose 2lln, 2lln-trivial or single)")


def _strict(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class PolicyParams:
    c1: float = 1.0
    c2: float = 2.0
    kappa: float = 0.2


@dataclass(frozen=True)
class HgiParams:
    dt: float = 1e-3
    T: float = 5000.0
    replications: int = 8
    burn_in: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    network: Any = "2lln"
    arrival: Any = "exponential"
    service: Any = "exponential"
    policy: PolicyParams = field(default_factory=PolicyParams)
    r_grid: tuple = (4, 8, 16, 32)
    replications: int = 64
    T: float = 200.0
    varsigma: float = 1.0
    discount_tol: float = 1e-4
    q0: tuple | None = None
    hgi: HgiParams = field(default_factory=HgiParams)
    seed: int = 0
    jobs: int = 1
    out: str = "results"
    mode: str = "converge-ergodic"
    base_dir: str = field(default=".", compare=False, repr=False)

    def __post_init__(self):
        if isinstance(self.policy, Mapping):
            object.__setattr__(self, "policy", _strict(PolicyParams, self.policy, "policy"))
        if isinstance(self.hgi, Mapping):
            object.__setattr__(self, "hgi", _strict(HgiParams, self.hgi, "hgi"))
        object.__setattr__(self, "r_grid", tuple(float(r) for r in self.r_grid))
        if self.q0 is not None:
            object.__setattr__(self, "q0", tuple(int(v) for v in self.q0))
        self.check()

    def check(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "validate" and self.mode != "hgi-only":
            if not self.r_grid:
                raise ConfigError("r_grid must not be empty")
            if any(b <= a for a, b in zip(self.r_grid, self.r_grid[1:])):
                raise ConfigError("r_grid must be strictly ascending")
            if self.replications < 1:
                raise ConfigError("replications must be >= 1")
        if self.mode in ("converge-ergodic", "single-run") and not self.T > 0:
            raise ConfigError("T must be positive")
        if self.mode == "converge-discounted" and not (self.varsigma > 0 and self.discount_tol > 0):
            raise ConfigError("varsigma and discount_tol must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not (self.hgi.dt > 0 and self.hgi.T > 0 and self.hgi.replications >= 1
                and 0 <= self.hgi.burn_in < 1):
            raise ConfigError("invalid hgi parameters")

    def network_spec(self) -> NetworkSpec:
        net = self.network
        if isinstance(net, NetworkSpec):
            return net
        if isinstance(net, Mapping):
            return NetworkSpec.from_dict(net)
        if isinstance(net, str):
            p = Path(self.base_dir) / net
            if p.suffix in (".yaml", ".yml", ".json") and p.exists():
                with open(p) as f:
                    data = json.load(f) if p.suffix == ".json" else yaml.safe_load(f)
                return NetworkSpec.from_dict(data)
            return builtin_network(net)
        raise ConfigError("network must be a builtin name, a file path or a mapping")

    def families(self, J: int) -> tuple[list[DistributionSpec], list[DistributionSpec]]:
        out = []
        for name in ("arrival", "service"):
            v = getattr(self, name)
            items = [v] * J if isinstance(v, str) else list(v)
            if len(items) != J:
                raise ConfigError(f"{name} needs one family per class ({J})")
            out.append([DistributionSpec.parse(s) for s in items])
        return out[0], out[1]

    def with_(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def echo(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}
        d["policy"] = dataclasses.asdict(self.policy)
        d["hgi"] = dataclasses.asdict(self.hgi)
        d["r_grid"] = list(self.r_grid)
        d["q0"] = None if self.q0 is None else list(self.q0)
        if isinstance(self.network, NetworkSpec):
            d["network"] = self.network.to_dict()
        return d


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, Mapping):
        raise ConfigError("config file must contain a mapping")
    unknown = set(data) - {f.name for f in dataclasses.fields(ExperimentConfig)} | ({"base_dir"} & set(data))
    if unknown:
        raise ConfigError(f"unknown key(s) in config: {sorted(unknown)}")
    try:
        return ExperimentConfig(**data, base_dir=str(path.parent))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
