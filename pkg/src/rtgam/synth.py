"""Synthetic epidemics with known ground truth.

A scenario fixes true smooth effect shapes, true province intercepts, and a
noise level; the generator draws slowly varying covariate series, composes
the true log reproductive number, runs the renewal process forward, and
convolves with the reporting delay to produce observable case counts.  The
returned ground truth (R_t paths, centered effect curves, intercepts,
explained-variance fraction) is what estimator and model output are checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Callable

import numpy as np

from .panel import ObservationRow, Panel
from .rt import (
    DelayModel,
    GenerationInterval,
    RtSeries,
    default_delay_model,
    discretize_generation_interval,
)

OVERFLOW_GUARD = 1e12

COVARIATES = ["mobility_decrease_pct", "temperature_c", "humidity_pct", "pm25"]

DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "mobility_decrease_pct": (-9.0, 47.0),
    "temperature_c": (0.5, 36.0),
    "humidity_pct": (11.5, 100.0),
    "pm25": (5.0, 172.0),
}


class SimulationError(ValueError):
    """Raised for invalid scenarios or runaway epidemics."""


def default_effect_shapes() -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    """True effect shapes: rising-saturating mobility, falling-then-flat
    temperature, a humidity bump below 50 percent, and a PM2.5 effect that is
    flat below about 70 and rises beyond it."""
    return {
        "mobility_decrease_pct": lambda x: 0.12 * np.tanh((np.asarray(x, float) - 15.0) / 12.0),
        "temperature_c": lambda x: -0.11 * np.tanh((np.asarray(x, float) - 8.0) / 9.0),
        "humidity_pct": lambda x: 0.08 * np.exp(-(((np.asarray(x, float) - 35.0) / 14.0) ** 2)),
        "pm25": lambda x: 0.033 * np.logaddexp(0.0, (np.asarray(x, float) - 90.0) / 15.0),
    }


@dataclass
class ScenarioSpec:
    """Everything that defines a synthetic study."""

    n_provinces: int = 23
    days: int = 160
    start: date = date(2020, 2, 24)
    noise_sd: float = 0.05
    seed: int = 0
    seed_cases: float = 5000.0
    poisson: bool = False
    test_base: float = 5000.0
    test_weekly_amplitude: float = 0.3
    covariate_timescale: float = 1.0
    intercepts: np.ndarray | None = None
    effects: dict[str, Callable] | None = None
    ranges: dict[str, tuple[float, float]] | None = None
    gi: GenerationInterval | None = None
    delay: DelayModel | None = None

    def __post_init__(self) -> None:
        if self.n_provinces < 1:
            raise SimulationError("need at least one province")
        if self.days < 30:
            raise SimulationError("need at least 30 days")
        if self.noise_sd < 0:
            raise SimulationError("noise SD must be non-negative")
        if self.seed_cases <= 0 or self.test_base <= 0:
            raise SimulationError("seed cases and test volume must be positive")
        if not 0 <= self.test_weekly_amplitude < 1:
            raise SimulationError("weekly test amplitude must be in [0, 1)")
        if self.covariate_timescale <= 0:
            raise SimulationError("covariate timescale must be positive")
        if self.gi is None:
            self.gi = discretize_generation_interval(4.7, 2.9, 14)
        if self.delay is None:
            self.delay = default_delay_model()
        if self.effects is None:
            self.effects = default_effect_shapes()
        if self.ranges is None:
            self.ranges = dict(DEFAULT_RANGES)
        if set(self.effects) != set(COVARIATES) or set(self.ranges) != set(COVARIATES):
            raise SimulationError(f"effects and ranges must cover exactly {COVARIATES}")
        lo, hi = self.ranges["humidity_pct"]
        if lo < 0 or hi > 100:
            raise SimulationError("humidity range must lie within [0, 100]")
        if self.ranges["pm25"][0] < 0:
            raise SimulationError("pm25 range must be non-negative")
        for name, (a, b) in self.ranges.items():
            if not b > a:
                raise SimulationError(f"empty range for {name}")
        if self.intercepts is None:
            centered = np.linspace(-0.05, 0.05, self.n_provinces)
            self.intercepts = centered - centered.mean()
        else:
            self.intercepts = np.asarray(self.intercepts, dtype=float)
            if self.intercepts.shape != (self.n_provinces,):
                raise SimulationError("need one intercept per province")


@dataclass
class SimulatedPanel:
    """A synthetic panel plus the ground truth it was generated from."""

    panel: Panel
    true_rt: dict[str, RtSeries]
    effects: dict[str, Callable[[np.ndarray], np.ndarray]]  # centered over the sample
    effect_offsets: dict[str, float]
    intercepts: dict[str, float]  # effective levels after effect centering
    intercepts_raw: dict[str, float]
    explained_variance: float
    scenario: ScenarioSpec


def simulate_epidemic(
    rt_path: np.ndarray,
    gi: GenerationInterval,
    seed_cases: float,
    rng: np.random.Generator | None = None,
    poisson: bool = False,
) -> np.ndarray:
    """Run the renewal process forward under a given R_t path.

    The first max_lag days are seeded at seed_cases; afterwards
    I_t = R_t * sum_s w_s I_{t-s}, optionally Poisson-perturbed.  Aborts if
    incidence exceeds 1e12.
    """
    r = np.asarray(rt_path, dtype=float)
    if r.ndim != 1 or r.size <= gi.max_lag:
        raise SimulationError("R_t path must be longer than the generation-interval support")
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise SimulationError("R_t path must be finite and non-negative")
    if seed_cases <= 0:
        raise SimulationError("seed_cases must be positive")
    if poisson and rng is None:
        raise SimulationError("Poisson noise needs a random generator")

    n = r.size
    lag = gi.max_lag
    incidence = np.empty(n)
    incidence[:lag] = seed_cases
    weights = gi.weights[::-1]  # aligned with incidence[t-lag:t]
    for t in range(lag, n):
        mean = r[t] * float(np.dot(weights, incidence[t - lag: t]))
        value = float(rng.poisson(mean)) if poisson else mean
        if value > OVERFLOW_GUARD:
            raise SimulationError(f"incidence exceeded {OVERFLOW_GUARD:g} at day {t}")
        incidence[t] = value
    return incidence


def _smooth_series(
    rng: np.random.Generator, lo: float, hi: float, days: int, timescale: float
) -> np.ndarray:
    """A slowly varying in-range series: two incommensurate sinusoids plus drift."""
    width = hi - lo
    mid = rng.uniform(lo + 0.30 * width, hi - 0.30 * width)
    a1 = rng.uniform(0.20, 0.34) * width
    a2 = rng.uniform(0.04, 0.10) * width
    p1 = rng.uniform(120.0, 240.0) * timescale
    p2 = rng.uniform(45.0, 90.0) * timescale
    ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, 2)
    drift = rng.uniform(-0.15, 0.15) * width
    t = np.arange(days)
    x = (
        mid
        + a1 * np.sin(2.0 * np.pi * t / p1 + ph1)
        + a2 * np.sin(2.0 * np.pi * t / p2 + ph2)
        + drift * t / days
    )
    return np.clip(x, lo, hi)


def _forward_reports(incidence: np.ndarray, delay: DelayModel) -> np.ndarray:
    """Convolve infections with the delay; history before day 0 is held at I_0."""
    w = delay.combined()
    n = incidence.size
    padded = np.concatenate([np.full(delay.max_delay, incidence[0]), incidence])
    reports = np.zeros(n)
    for d in range(delay.max_delay + 1):
        if w[d] == 0.0:
            continue
        start = delay.max_delay - d
        reports += w[d] * padded[start: start + n]
    return reports


def simulate_panel(spec: ScenarioSpec) -> SimulatedPanel:
    """Generate a full synthetic panel with ground truth attached."""
    rng = np.random.default_rng(spec.seed)
    provinces = [f"P{i + 1:02d}" for i in range(spec.n_provinces)]
    dates = [spec.start + timedelta(days=t) for t in range(spec.days)]

    covariates: dict[str, dict[str, np.ndarray]] = {p: {} for p in provinces}
    for p in provinces:
        for name in COVARIATES:
            lo, hi = spec.ranges[name]
            covariates[p][name] = _smooth_series(rng, lo, hi, spec.days, spec.covariate_timescale)

    # Center each true effect over the pooled drawn sample so the ground
    # truth matches what an identifiable fit can recover.
    offsets = {
        name: float(
            np.mean(np.concatenate([spec.effects[name](covariates[p][name]) for p in provinces]))
        )
        for name in COVARIATES
    }
    def _centered(f: Callable, off: float) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: f(x) - off

    centered = {name: _centered(spec.effects[name], offsets[name]) for name in COVARIATES}
    offset_total = float(sum(offsets.values()))

    rows: list[ObservationRow] = []
    true_rt: dict[str, RtSeries] = {}
    intercepts: dict[str, float] = {}
    intercepts_raw: dict[str, float] = {}
    signal_parts: list[np.ndarray] = []

    for i, p in enumerate(provinces):
        lam = float(spec.intercepts[i])
        signal = lam + np.sum(
            [spec.effects[name](covariates[p][name]) for name in COVARIATES], axis=0
        )
        signal_parts.append(signal)
        noise = rng.normal(0.0, spec.noise_sd, spec.days) if spec.noise_sd > 0 else 0.0
        log_rt = signal + noise
        rt_path = np.exp(log_rt)

        incidence = simulate_epidemic(rt_path, spec.gi, spec.seed_cases, rng, spec.poisson)
        reports = _forward_reports(incidence, spec.delay)
        week_phase = rng.uniform(0.0, 2.0 * np.pi)
        tests = spec.test_base * (
            1.0 + spec.test_weekly_amplitude * np.sin(2.0 * np.pi * np.arange(spec.days) / 7.0 + week_phase)
        )
        cases = reports * tests / np.median(tests)

        region = f"R{1 + i % 5}"
        for t, d in enumerate(dates):
            rows.append(
                ObservationRow(
                    d, p, region, float(cases[t]), float(tests[t]),
                    float(covariates[p]["temperature_c"][t]),
                    float(covariates[p]["humidity_pct"][t]),
                    float(covariates[p]["pm25"][t]),
                    float(covariates[p]["mobility_decrease_pct"][t]),
                )
            )
        true_rt[p] = RtSeries(
            p, list(dates), rt_path, reports, incidence,
            [set() for _ in range(spec.days)], {"truth": True},
        )
        intercepts_raw[p] = lam
        intercepts[p] = lam + offset_total

    rows.sort(key=lambda r: (r.province, r.date))
    panel = Panel(rows, provinces, (dates[0], dates[-1]))

    signal = np.concatenate(signal_parts)
    var_signal = float(np.var(signal, ddof=1))
    ev = var_signal / (var_signal + spec.noise_sd**2) if var_signal > 0 else 0.0

    return SimulatedPanel(
        panel, true_rt, centered, offsets, intercepts, intercepts_raw, ev, spec
    )
