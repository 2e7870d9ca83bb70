"""Experiment configuration: one flat `key = value` file plus CLI overrides.

Defaults follow the benchmark protocol (ten agents, 2000 rounds, stepsize
0.01, five perturbations of radius 0.1 priced by 15-step rollouts).  The
initial-state scale x0_std is deliberately small: it sets the cost scale,
and with it the effective stepsize, so that 0.01 sits inside the stable
descent regime for this plant (see README).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

ALGORITHMS = ("scalar", "baseline", "both")
ORACLE_MODES = ("rollout", "exact")
BIT_POLICIES = ("scalars_only", "scalars_plus_seeds")
INSTABILITY_POLICIES = ("halt", "cap")
PROJECTION_MODES = ("rademacher", "exhaustive")


@dataclass(frozen=True)
class ExperimentConfig:
    m: int = 10
    t_rounds: int = 2000
    eta: float = 0.01
    n_s: int = 5
    n_traj: int = 1
    tau: int = 15
    radius: float = 0.1
    eps1: float = 0.0
    eps2: float = 0.0
    mc_runs: int = 10
    run_seed: int = 0
    algorithm: str = "both"
    oracle_mode: str = "rollout"
    bit_policy: str = "scalars_only"
    instability_policy: str = "halt"
    projection: str = "rademacher"
    x0_std: float = 0.03
    k0_scale: float = 1.62
    cost_cap: float = 1e12
    guard: float = 1e8
    stability_margin: float = 0.02
    fix_fleet: bool = False

    def validate(self) -> None:
        positive = ["m", "t_rounds", "n_s", "n_traj", "tau", "mc_runs"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ["radius", "x0_std", "cost_cap", "guard"]:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("heterogeneity levels must be nonnegative")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.oracle_mode not in ORACLE_MODES:
            raise ValueError(f"oracle_mode must be one of {ORACLE_MODES}")
        if self.bit_policy not in BIT_POLICIES:
            raise ValueError(f"bit_policy must be one of {BIT_POLICIES}")
        if self.instability_policy not in INSTABILITY_POLICIES:
            raise ValueError(f"instability_policy must be one of {INSTABILITY_POLICIES}")
        if self.projection not in PROJECTION_MODES:
            raise ValueError(f"projection must be one of {PROJECTION_MODES}")

    def algorithms(self) -> tuple[str, ...]:
        return ("scalar", "baseline") if self.algorithm == "both" else (self.algorithm,)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise KeyError(f"unknown config key: {name}")
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean for {name}: {raw!r}")
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        values[key] = _parse_value(key, raw)
    config = replace(base or ExperimentConfig(), **values)
    config.validate()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply 'key=value' strings on top of an existing config."""
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        values[key] = _parse_value(key, raw)
    config = replace(config, **values)
    config.validate()
    return config


def format_config(config: ExperimentConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(config)]
    return "\n".join(lines) + "\n"
