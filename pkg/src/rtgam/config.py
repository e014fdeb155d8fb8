"""Run configuration: defaults, key-value config files, typed accessors.

Config files are plain text, one `section.key = value` per line, with `#`
comments and blank lines ignored.  Command-line flags override file values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from datetime import date

import numpy as np

from .basis import SmoothSpec
from .gam import ModelSpec
from .rt import DelayModel, GenerationInterval, default_delay_model, discretize_generation_interval

MODEL_COVARIATES = ["mobility_decrease_pct", "temperature_c", "humidity_pct", "pm25"]


class ConfigError(ValueError):
    """Raised for unknown keys, unparseable values, or inconsistent settings."""


@dataclass
class RunConfig:
    window_start: date = date(2020, 2, 24)
    window_end: date = date(2020, 8, 1)
    threshold: float = 2000.0
    max_missing_frac: float = 0.2
    gap_limit: int = 3
    gi_mean: float = 4.7
    gi_sd: float = 2.9
    gi_max_lag: int = 14
    delay_mean: float = 5.0
    delay_sd: float = 3.0
    delay_max: int = 21
    incubation_days: int = 5
    rt_half_width: int = 3
    rt_test_floor: float | None = None
    basis_dim: int = 6
    grid_min: float = 1e-6
    grid_max: float = 1e6
    grid_points: int = 61
    sweeps: int = 3
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    seed: int = 0
    sim_provinces: int = 23
    sim_days: int = 160
    sim_noise_sd: float = 0.05

    def validate(self) -> None:
        if self.window_end < self.window_start:
            raise ConfigError("study window ends before it starts")
        if self.threshold < 0:
            raise ConfigError("case threshold must be non-negative")
        if not 0 <= self.max_missing_frac <= 1:
            raise ConfigError("max missing fraction must be in [0, 1]")
        if self.gap_limit < 0:
            raise ConfigError("gap limit must be non-negative")
        if self.gi_mean <= 0 or self.gi_sd <= 0:
            raise ConfigError("generation interval needs positive mean and sd")
        if self.delay_mean <= 0 or self.delay_sd <= 0:
            raise ConfigError("reporting delay needs positive mean and sd")
        if self.incubation_days < 0 or self.delay_max < 0:
            raise ConfigError("delay supports must be non-negative")
        if self.rt_half_width < 0:
            raise ConfigError("smoothing half-width must be non-negative")
        if self.rt_test_floor is not None and self.rt_test_floor <= 0:
            raise ConfigError("test floor must be positive")
        if self.basis_dim < 3:
            raise ConfigError("basis dimension must be at least 3")
        if not 0 < self.grid_min < self.grid_max:
            raise ConfigError("lambda grid bounds must satisfy 0 < min < max")
        if self.grid_points < 2:
            raise ConfigError("lambda grid needs at least 2 points")
        if self.sweeps < 1:
            raise ConfigError("need at least one GCV sweep")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.sim_provinces < 1 or self.sim_days < 30:
            raise ConfigError("simulation needs >= 1 province and >= 30 days")
        if self.sim_noise_sd < 0:
            raise ConfigError("simulation noise SD must be non-negative")

    @property
    def window(self) -> tuple[date, date]:
        return (self.window_start, self.window_end)

    def generation_interval(self) -> GenerationInterval:
        return discretize_generation_interval(self.gi_mean, self.gi_sd, self.gi_max_lag)

    def delay_model(self) -> DelayModel:
        return default_delay_model(
            self.incubation_days, self.delay_mean, self.delay_sd, self.delay_max
        )

    def lambda_grid(self) -> np.ndarray:
        return np.logspace(
            np.log10(self.grid_min), np.log10(self.grid_max), self.grid_points
        )

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            [SmoothSpec(name, self.basis_dim) for name in MODEL_COVARIATES],
            self.lambda_grid(),
            self.sweeps,
        )


# config-file key -> (RunConfig field, parser)
KEY_FIELDS: dict[str, tuple[str, type]] = {
    "panel.window_start": ("window_start", date),
    "panel.window_end": ("window_end", date),
    "panel.threshold": ("threshold", float),
    "panel.max_missing_frac": ("max_missing_frac", float),
    "panel.gap_limit": ("gap_limit", int),
    "gi.mean": ("gi_mean", float),
    "gi.sd": ("gi_sd", float),
    "gi.max_lag": ("gi_max_lag", int),
    "delay.mean": ("delay_mean", float),
    "delay.sd": ("delay_sd", float),
    "delay.max": ("delay_max", int),
    "delay.incubation": ("incubation_days", int),
    "rt.half_width": ("rt_half_width", int),
    "rt.test_floor": ("rt_test_floor", float),
    "model.basis_dim": ("basis_dim", int),
    "model.grid_min": ("grid_min", float),
    "model.grid_max": ("grid_max", float),
    "model.grid_points": ("grid_points", int),
    "model.sweeps": ("sweeps", int),
    "run.jobs": ("jobs", int),
    "run.seed": ("seed", int),
    "sim.provinces": ("sim_provinces", int),
    "sim.days": ("sim_days", int),
    "sim.noise_sd": ("sim_noise_sd", float),
}


def parse_config_file(path: str) -> dict[str, str]:
    """Read `key = value` pairs; `#` starts a comment, blank lines ignored."""
    pairs: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value'")
        pairs[key] = value
    return pairs


def apply_pairs(config: RunConfig, pairs: dict[str, str]) -> RunConfig:
    for key, value in pairs.items():
        if key not in KEY_FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        name, typ = KEY_FIELDS[key]
        try:
            if typ is date:
                parsed: object = date.fromisoformat(value)
            elif typ is int:
                parsed = int(value)
            else:
                parsed = float(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: '{value}'") from None
        setattr(config, name, parsed)
    return config


def load_config(path: str | None = None) -> RunConfig:
    """Defaults, overlaid with a config file when given; validated."""
    config = RunConfig()
    if path is not None:
        apply_pairs(config, parse_config_file(path))
    config.validate()
    return config


def config_as_dict(config: RunConfig) -> dict:
    """JSON-ready view of the resolved configuration."""
    out: dict[str, object] = {}
    for f in fields(config):
        value = getattr(config, f.name)
        out[f.name] = value.isoformat() if isinstance(value, date) else value
    return out
