"""Reproductive-number estimator: discretizations, adjustment, renewal ratio."""

from datetime import date, timedelta

import numpy as np
import pytest
from scipy import integrate, stats

from rtgam.rt import (
    DelayModel,
    EstimatorError,
    adjust_for_testing,
    default_delay_model,
    default_test_floor,
    discretize_generation_interval,
    discretize_onset_to_report,
    estimate_province_rt,
    estimate_rt,
    point_mass_delay,
    shift_to_infection_dates,
)

from conftest import daily_dates


# --- generation interval ---------------------------------------------------


def test_gi_mean_matches_quadrature_oracle(gi):
    # independent discretization: integrate the gamma density over the same
    # centered unit bins with adaptive quadrature, then renormalize
    shape = (4.7 / 2.9) ** 2
    scale = 2.9**2 / 4.7
    dist = stats.gamma(shape, scale=scale)
    masses = []
    for s in range(1, 15):
        lo = max(s - 0.5, 0.0)
        val, _ = integrate.quad(dist.pdf, lo, s + 0.5)
        masses.append(val)
    masses = np.array(masses)
    masses /= masses.sum()
    oracle_mean = float(np.sum(np.arange(1, 15) * masses))
    assert abs(gi.discretized_mean - oracle_mean) < 1e-6
    assert np.abs(gi.weights - masses).max() < 1e-9


def test_gi_mean_in_plausible_band(gi):
    assert 4.5 <= gi.discretized_mean <= 4.9
    assert abs(gi.discretized_mean - 4.644057801326551) < 1e-12
    assert abs(gi.weights.sum() - 1.0) < 1e-12


def test_gi_degenerate_at_one_day():
    gi = discretize_generation_interval(1.0, 0.01, max_lag=14)
    assert gi.weights[0] > 0.999
    assert abs(gi.discretized_mean - 1.0) < 1e-3


def test_gi_validation():
    with pytest.raises(EstimatorError):
        discretize_generation_interval(-1.0, 2.0)
    with pytest.raises(EstimatorError):
        discretize_generation_interval(4.7, 2.9, max_lag=5)


# --- test-volume adjustment -------------------------------------------------


def test_adjustment_worked_example():
    adjusted, floored = adjust_for_testing(
        np.array([10.0, 20.0]), np.array([0.0, 100.0]), floor=10.0
    )
    assert np.allclose(adjusted, [50.0, 10.0])
    assert list(floored) == [True, False]


def test_adjustment_identity_for_constant_tests():
    cases = np.array([5.0, 8.0, 13.0])
    adjusted, floored = adjust_for_testing(cases, np.full(3, 400.0), floor=1.0)
    assert np.allclose(adjusted, cases)
    assert not floored.any()


def test_halving_tests_doubles_adjusted_cases():
    cases = np.full(5, 40.0)
    tests = np.array([100.0, 100.0, 50.0, 100.0, 100.0])
    adjusted, _ = adjust_for_testing(cases, tests, floor=1.0)
    assert np.isclose(adjusted[2], 2.0 * adjusted[0])


def test_zero_test_day_is_floored_and_scaled():
    cases = np.array([3.0, 7.0, 7.0])
    tests = np.array([0.0, 100.0, 100.0])
    adjusted, floored = adjust_for_testing(cases, tests, floor=10.0)
    # day 0: cases / floor * median = 3 / 10 * 100
    assert np.isclose(adjusted[0], 30.0)
    assert list(floored) == [True, False, False]


def test_adjustment_homogeneity():
    rng = np.random.default_rng(0)
    cases = rng.uniform(0, 50, 30)
    tests = rng.uniform(10, 500, 30)
    a1, _ = adjust_for_testing(cases, tests, floor=5.0)
    a2, _ = adjust_for_testing(3.0 * cases, tests, floor=5.0)
    assert np.allclose(a2, 3.0 * a1, rtol=1e-12)


def test_adjustment_errors():
    with pytest.raises(EstimatorError):
        adjust_for_testing(np.zeros(3), np.zeros(3), floor=1.0)
    with pytest.raises(EstimatorError):
        adjust_for_testing(np.array([-1.0]), np.array([10.0]), floor=1.0)
    with pytest.raises(EstimatorError):
        adjust_for_testing(np.ones(3), np.ones(2), floor=1.0)
    with pytest.raises(EstimatorError):
        adjust_for_testing(np.ones(3), np.ones(3), floor=0.0)


def test_default_floor_is_first_percentile_of_nonzero():
    tests = np.array([0.0] + [200.0] * 99)
    assert default_test_floor(tests) == 200.0
    assert default_test_floor(np.array([0.5, 0.5, 0.5])) == 1.0
    with pytest.raises(EstimatorError):
        default_test_floor(np.zeros(5))


# --- delay handling ----------------------------------------------------------


def test_point_mass_delay_shifts_a_spike():
    reports = np.full(40, 100.0)
    reports[20] = 500.0
    infections, provisional = shift_to_infection_dates(reports, point_mass_delay(7))
    assert infections[13] == 500.0
    assert np.all(infections[:13] == 100.0)
    assert np.all(infections[14 : 40 - 7] == 100.0)
    assert provisional.sum() == 7 and provisional[-7:].all()


def test_uniform_onset_delay_preserves_constant_series():
    delay = DelayModel(5, np.array([1 / 3, 1 / 3, 1 / 3]))
    assert delay.max_delay == 7
    infections, provisional = shift_to_infection_dates(np.full(30, 60.0), delay)
    assert np.allclose(infections[np.isfinite(infections)], 60.0)
    assert provisional[-7:].all() and not provisional[:-7].any()


def test_combined_delay_weights_sum_to_one():
    delay = default_delay_model()
    w = delay.combined()
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.all(w[: delay.incubation_days] == 0.0)


def test_onset_discretization_validation():
    with pytest.raises(EstimatorError):
        discretize_onset_to_report(0.0, 3.0)
    w = discretize_onset_to_report(5.0, 3.0, max_delay=21)
    assert w.shape == (22,) and abs(w.sum() - 1.0) < 1e-12


# --- renewal-ratio estimator --------------------------------------------------


def test_constant_incidence_gives_unit_rt(gi):
    rt, flags = estimate_rt(np.full(60, 500.0), gi)
    defined = np.isfinite(rt)
    assert defined.sum() >= 30
    assert np.abs(rt[defined] - 1.0).max() < 1e-6
    for t in np.where(~defined)[0]:
        assert "undefined" in flags[t]


def test_geometric_growth_matches_closed_form(gi):
    rho = 1.05
    series = 500.0 * rho ** np.arange(80)
    rt, _ = estimate_rt(series, gi)
    lags = np.arange(1, gi.max_lag + 1)
    closed = 1.0 / float(np.sum(gi.weights * rho ** (-lags)))
    assert abs(closed - 1.2438622002603161) < 1e-12
    defined = np.isfinite(rt)
    assert np.abs(rt[defined] - closed).max() < 1e-3


def test_estimator_recovers_simulated_constant_r(gi):
    from rtgam.synth import simulate_epidemic

    r_true = np.full(60, 1.3)
    infections = simulate_epidemic(r_true, gi, seed_cases=100.0)
    rt, _ = estimate_rt(infections, gi)
    settled = np.arange(60) >= 2 * gi.max_lag
    usable = settled & np.isfinite(rt)
    assert usable.any()
    assert np.abs(rt[usable] - 1.3).max() <= 0.05


def test_estimate_is_scale_invariant(gi):
    rng = np.random.default_rng(5)
    series = rng.uniform(50, 150, 70)
    r1, _ = estimate_rt(series, gi)
    r2, _ = estimate_rt(3.7e4 * series, gi)
    both = np.isfinite(r1) & np.isfinite(r2)
    assert (np.isfinite(r1) == np.isfinite(r2)).all()
    assert np.abs(r1[both] - r2[both]).max() < 1e-12


def test_explosive_growth_is_clipped(gi):
    series = 1.0 * 3.0 ** np.arange(60)
    rt, flags = estimate_rt(series, gi)
    defined = np.isfinite(rt)
    assert np.all(rt[defined] <= 10.0)
    clipped = [t for t in range(60) if "clipped" in flags[t]]
    assert clipped and np.all(rt[clipped] == 10.0)


def test_estimator_input_validation(gi):
    with pytest.raises(EstimatorError):
        estimate_rt(np.ones((3, 3)), gi)
    with pytest.raises(EstimatorError):
        estimate_rt(np.ones(10), gi)  # not longer than max_lag
    with pytest.raises(EstimatorError):
        estimate_rt(np.concatenate([np.ones(30), [-2.0]]), gi)
    with pytest.raises(EstimatorError):
        estimate_rt(np.zeros(30), gi)


# --- per-province pipeline -----------------------------------------------------


def test_province_series_expands_date_gaps(gi):
    dates = [d for i, d in enumerate(daily_dates(72)) if i not in (34, 35)]
    cases = np.full(len(dates), 800.0)
    tests = np.full(len(dates), 1000.0)
    series = estimate_province_rt(
        "X", dates, cases, tests, gi=gi, delay=point_mass_delay(0)
    )
    assert len(series.dates) == 72
    assert series.dates == daily_dates(72)
    assert sum("missing" in f for f in series.flags) == 2
    defined = series.defined()
    # every defined day is exactly 1; days around the hole are undefined
    assert np.abs(series.rt[defined] - 1.0).max() < 1e-9
    assert not defined[31:53].any()


def test_province_series_marks_provisional_tail(gi):
    n = 60
    dates = daily_dates(n)
    series = estimate_province_rt(
        "X",
        dates,
        np.full(n, 300.0),
        np.full(n, 1000.0),
        gi=gi,
        delay=point_mass_delay(7),
    )
    provisional = [t for t in range(n) if "provisional" in series.flags[t]]
    assert provisional == list(range(n - 7, n))
    usable = series.usable()
    assert not usable[-7:].any()
    assert np.abs(series.rt[usable] - 1.0).max() < 1e-6


def test_province_series_validation(gi):
    delay = point_mass_delay(0)
    with pytest.raises(EstimatorError):
        estimate_province_rt("X", [], np.array([]), np.array([]), gi=gi, delay=delay)
    dates = daily_dates(30)
    dates[5] = dates[4]
    with pytest.raises(EstimatorError):
        estimate_province_rt(
            "X", dates, np.ones(30), np.ones(30), gi=gi, delay=delay
        )


def test_province_series_records_configuration(gi):
    n = 50
    series = estimate_province_rt(
        "X",
        daily_dates(n),
        np.full(n, 100.0),
        np.full(n, 900.0),
        gi=gi,
        delay=default_delay_model(),
        test_floor=25.0,
    )
    cfg = series.config
    assert cfg["gi_mean"] == 4.7 and cfg["gi_max_lag"] == 14
    assert cfg["test_floor"] == 25.0
    assert cfg["half_width"] == 3
