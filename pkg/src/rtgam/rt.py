"""Deterministic renewal-equation estimation of the daily reproductive number.

The estimator follows the renewal identity R_t = I_t / sum_s w_s I_{t-s}
with a discretized generation-interval distribution w.  Reported case counts
are first rescaled by testing volume, then shifted back to infection dates
through an incubation-plus-reporting delay, then smoothed with a centered
moving average before the ratio is taken.  Days whose estimate cannot be
formed are flagged, never silently zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np
from scipy import stats

DENOM_FLOOR = 1e-9
RT_CLIP = (0.01, 10.0)


class EstimatorError(ValueError):
    """Raised when an input series cannot support estimation."""


@dataclass
class GenerationInterval:
    """Discretized generation-interval distribution on integer lags 1..max_lag."""

    mean_days: float
    sd_days: float
    max_lag: int
    weights: np.ndarray  # index s-1 holds the weight at lag s

    @property
    def discretized_mean(self) -> float:
        lags = np.arange(1, self.max_lag + 1)
        return float(np.sum(lags * self.weights))


@dataclass
class DelayModel:
    """Infection-to-report delay: fixed incubation plus a reporting distribution.

    onset_weights[d] is the probability of a report d days after symptom
    onset; the combined delay puts that mass at incubation_days + d.
    """

    incubation_days: int
    onset_weights: np.ndarray

    @property
    def max_delay(self) -> int:
        return self.incubation_days + len(self.onset_weights) - 1

    def combined(self) -> np.ndarray:
        """Weights on infection-to-report offsets 0..max_delay."""
        w = np.zeros(self.max_delay + 1)
        w[self.incubation_days:] = self.onset_weights
        return w


@dataclass
class RtSeries:
    """Daily reproductive-number estimates for one province.

    rt holds nan on undefined days; flags[t] is a set drawn from
    {"undefined", "provisional", "clipped", "floored_tests"}.
    """

    province: str
    dates: list[date]
    rt: np.ndarray
    adjusted: np.ndarray
    infections: np.ndarray
    flags: list[set[str]]
    config: dict = field(default_factory=dict)

    def defined(self) -> np.ndarray:
        return np.isfinite(self.rt)

    def usable(self) -> np.ndarray:
        """Days that may enter model fitting: defined and not provisional."""
        prov = np.array(["provisional" in f for f in self.flags])
        return self.defined() & ~prov


def _centered_bin_masses(dist, n_bins: int, first_center: int) -> np.ndarray:
    # Unit-day bins centered on the integers, so a distribution degenerate at
    # an integer lands entirely on that lag and the discretized mean tracks
    # the continuous one.
    centers = np.arange(first_center, first_center + n_bins, dtype=float)
    lo = np.maximum(centers - 0.5, 0.0)
    hi = centers + 0.5
    return dist.cdf(hi) - dist.cdf(lo)


def discretize_generation_interval(
    mean_days: float, sd_days: float, max_lag: int = 14
) -> GenerationInterval:
    """Discretize a gamma generation interval onto integer lags 1..max_lag.

    Lag 0 is excluded so the renewal denominator never sees same-day
    transmission; the retained mass is renormalized to sum to one.
    """
    if mean_days <= 0 or sd_days <= 0:
        raise EstimatorError("generation interval needs positive mean and sd")
    if max_lag < 2 * mean_days:
        raise EstimatorError(
            f"max_lag {max_lag} too short for mean {mean_days} (need >= 2x mean)"
        )
    shape = (mean_days / sd_days) ** 2
    scale = sd_days**2 / mean_days
    masses = _centered_bin_masses(stats.gamma(shape, scale=scale), max_lag, 1)
    total = masses.sum()
    if total <= 0:
        raise EstimatorError("generation interval has no mass on lags 1..max_lag")
    return GenerationInterval(mean_days, sd_days, max_lag, masses / total)


def discretize_onset_to_report(
    mean_days: float, sd_days: float, max_delay: int = 21
) -> np.ndarray:
    """Discretize a lognormal onset-to-report delay onto lags 0..max_delay."""
    if mean_days <= 0 or sd_days <= 0:
        raise EstimatorError("onset-to-report delay needs positive mean and sd")
    sigma2 = np.log1p((sd_days / mean_days) ** 2)
    mu = np.log(mean_days) - sigma2 / 2.0
    dist = stats.lognorm(s=np.sqrt(sigma2), scale=np.exp(mu))
    masses = _centered_bin_masses(dist, max_delay + 1, 0)
    return masses / masses.sum()


def default_delay_model(
    incubation_days: int = 5,
    onset_mean: float = 5.0,
    onset_sd: float = 3.0,
    max_onset_delay: int = 21,
) -> DelayModel:
    return DelayModel(
        incubation_days, discretize_onset_to_report(onset_mean, onset_sd, max_onset_delay)
    )


def point_mass_delay(days: int) -> DelayModel:
    """Delay model that reports exactly `days` after infection."""
    return DelayModel(days, np.array([1.0]))


def default_test_floor(tests: np.ndarray) -> float:
    """Default testing-volume floor: 1st percentile of nonzero counts, at least 1."""
    t = np.asarray(tests, dtype=float)
    nz = t[t > 0]
    if nz.size == 0:
        raise EstimatorError("test series is entirely zero")
    return max(1.0, float(np.percentile(nz, 1.0)))


def adjust_for_testing(
    cases: np.ndarray, tests: np.ndarray, floor: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rescale case counts by testing volume.

    adjusted_t = cases_t / max(tests_t, floor) * median(tests).  Returns the
    adjusted series and a mask of days whose test count was floored.
    """
    c = np.asarray(cases, dtype=float)
    t = np.asarray(tests, dtype=float)
    if c.shape != t.shape or c.ndim != 1:
        raise EstimatorError("cases and tests must be 1-d series of equal length")
    if np.any(c < 0) or np.any(t < 0):
        raise EstimatorError("case and test counts must be non-negative")
    if floor <= 0:
        raise EstimatorError("test floor must be positive")
    if not np.any(t > 0):
        raise EstimatorError("test series is entirely zero")
    floored = t < floor
    return c / np.maximum(t, floor) * np.nanmedian(t), floored


def shift_to_infection_dates(
    reports: np.ndarray, delay: DelayModel
) -> tuple[np.ndarray, np.ndarray]:
    """Back-shift a report-dated series to estimated infection dates.

    infections[t] = sum_d w_d * reports[t + d].  Trailing days with
    incomplete delay mass are renormalized over the available weight and
    flagged provisional; callers must exclude them from fitting.
    """
    r = np.asarray(reports, dtype=float)
    if r.ndim != 1:
        raise EstimatorError("reports must be a 1-d series")
    w = delay.combined()
    dmax = delay.max_delay
    n = r.size
    if n <= dmax:
        raise EstimatorError(f"series of length {n} is shorter than delay support {dmax}")
    acc = np.zeros(n)
    avail = np.zeros(n)
    for d in range(dmax + 1):
        if w[d] == 0.0:
            continue
        acc[: n - d] += w[d] * r[d:]
        avail[: n - d] += w[d]
    with np.errstate(invalid="ignore", divide="ignore"):
        infections = np.where(avail > 0, acc / avail, np.nan)
    provisional = np.arange(n) > n - 1 - dmax
    return infections, provisional


def _windowed_mean(x: np.ndarray, half_width: int) -> np.ndarray:
    """Centered moving average over windows fully inside the series.

    Days whose window would be clipped by either boundary are nan, and a
    window containing any undefined day is itself undefined: every defined
    value averages exactly the same 2*half_width+1 calendar days, so a
    constant or geometric segment is reproduced without edge bias.
    """
    if half_width == 0:
        return x.copy()
    n = x.size
    out = np.full(n, np.nan)
    width = 2 * half_width + 1
    finite = np.isfinite(x)
    vals = np.where(finite, x, 0.0)
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    ccnt = np.concatenate([[0], np.cumsum(finite)])
    for t in range(half_width, n - half_width):
        lo = t - half_width
        hi = t + half_width + 1
        if ccnt[hi] - ccnt[lo] == width:
            out[t] = (csum[hi] - csum[lo]) / width
    return out


def estimate_rt(
    infections: np.ndarray,
    gi: GenerationInterval,
    half_width: int = 3,
) -> tuple[np.ndarray, list[set[str]]]:
    """Renewal-ratio estimate of R_t from an infection-dated series.

    Days with insufficient history (t < max_lag), a denominator below
    1e-9, or missing smoothed values are undefined (nan) and flagged;
    estimates are clipped to [0.01, 10] with clipped days flagged.
    """
    i = np.asarray(infections, dtype=float)
    if i.ndim != 1:
        raise EstimatorError("infections must be a 1-d series")
    if i.size <= gi.max_lag:
        raise EstimatorError(
            f"series of length {i.size} is no longer than max_lag {gi.max_lag}"
        )
    if np.any(i[np.isfinite(i)] < 0):
        raise EstimatorError("incidence must be non-negative")
    if not np.any(np.nan_to_num(i) > 0):
        raise EstimatorError("incidence series is entirely zero")

    smoothed = _windowed_mean(i, half_width)
    n = i.size
    rt = np.full(n, np.nan)
    flags: list[set[str]] = [set() for _ in range(n)]
    lags = np.arange(1, gi.max_lag + 1)
    for t in range(n):
        if t < gi.max_lag or not np.isfinite(smoothed[t]):
            flags[t].add("undefined")
            continue
        hist = smoothed[t - lags]
        if not np.all(np.isfinite(hist)):
            flags[t].add("undefined")
            continue
        denom = float(np.dot(gi.weights, hist))
        if denom < DENOM_FLOOR:
            flags[t].add("undefined")
            continue
        val = smoothed[t] / denom
        lo, hi = RT_CLIP
        if val < lo or val > hi:
            flags[t].add("clipped")
            val = min(max(val, lo), hi)
        rt[t] = val
    return rt, flags


def estimate_province_rt(
    province: str,
    dates: list[date],
    cases: np.ndarray,
    tests: np.ndarray,
    *,
    gi: GenerationInterval,
    delay: DelayModel,
    half_width: int = 3,
    test_floor: float | None = None,
) -> RtSeries:
    """Full per-province pipeline: test adjustment, delay shift, renewal ratio.

    The renewal equation needs a daily axis, so the series is re-indexed to
    every calendar day between the first and last observation; days absent
    from the input become missing values and are flagged.
    """
    days = list(dates)
    if not days:
        raise EstimatorError("empty date series")
    if len({*days}) != len(days) or any(b <= a for a, b in zip(days, days[1:])):
        raise EstimatorError(f"dates for {province} must be strictly increasing")
    span = (days[-1] - days[0]).days + 1
    axis = [days[0] + timedelta(days=i) for i in range(span)]
    observed = np.array([(d - days[0]).days for d in days])
    c = np.full(span, np.nan)
    t_series = np.full(span, np.nan)
    c[observed] = np.asarray(cases, dtype=float)
    t_series[observed] = np.asarray(tests, dtype=float)
    missing = np.ones(span, dtype=bool)
    missing[observed] = False

    floor = default_test_floor(t_series) if test_floor is None else test_floor
    adjusted, floored = adjust_for_testing(c, t_series, floor)
    infections, provisional = shift_to_infection_dates(adjusted, delay)
    rt, flags = estimate_rt(infections, gi, half_width)
    for t in range(len(flags)):
        if missing[t]:
            flags[t].add("missing")
        if provisional[t]:
            flags[t].add("provisional")
        if floored[t]:
            flags[t].add("floored_tests")
    config = {
        "gi_mean": gi.mean_days,
        "gi_sd": gi.sd_days,
        "gi_max_lag": gi.max_lag,
        "incubation_days": delay.incubation_days,
        "onset_support": len(delay.onset_weights) - 1,
        "half_width": half_width,
        "test_floor": floor,
    }
    return RtSeries(province, axis, rt, adjusted, infections, flags, config)
