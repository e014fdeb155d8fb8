"""Shared fixtures and small builders used across the test modules."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from rtgam.config import RunConfig
from rtgam.rt import discretize_generation_interval
from rtgam.synth import default_effect_shapes


@pytest.fixture(scope="session")
def gi():
    return discretize_generation_interval(4.7, 2.9)


def model_spec(sweeps: int = 3, basis_dim: int | None = None, grid=None):
    """Default four-smooth model spec with optional overrides."""
    cfg = RunConfig()
    if basis_dim is not None:
        cfg.basis_dim = basis_dim
    ms = cfg.model_spec()
    ms.sweeps = sweeps
    if grid is not None:
        ms.lambda_grid = np.asarray(grid, dtype=float)
    return ms


def scaled_effects(factor: float):
    """Default effect shapes shrunk by a common factor."""
    base = default_effect_shapes()
    return {k: (lambda x, f=f, c=factor: c * f(x)) for k, f in base.items()}


def daily_dates(n: int, start: date = date(2020, 3, 1)) -> list[date]:
    return [start + timedelta(days=i) for i in range(n)]


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)
