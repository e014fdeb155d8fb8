"""Penalized additive model: design assembly, solver, GCV, fit invariants."""

import numpy as np
import pytest

from rtgam.basis import SmoothSpec, build_term
from rtgam.gam import (
    DEFAULT_GRID,
    FitError,
    PenaltyBlock,
    assemble_design,
    fit_from_dict,
    fit_gam,
    fit_penalized,
    fit_to_dict,
    predict_log_rt,
    select_lambdas_gcv,
)
from rtgam.rt import RtSeries
from rtgam.synth import COVARIATES, ScenarioSpec, simulate_panel

from conftest import model_spec


def small_sim(n_provinces=4, days=120, noise=0.05, seed=3, **kw):
    return simulate_panel(
        ScenarioSpec(n_provinces=n_provinces, days=days, noise_sd=noise, seed=seed, **kw)
    )


def unit_rt(series: RtSeries) -> RtSeries:
    return RtSeries(
        series.province, series.dates, np.ones_like(series.rt),
        series.adjusted, series.infections,
        [set() for _ in series.flags], series.config,
    )


def single_smooth_problem(seed, n=300, noise=0.2):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, n))
    y = np.sin(3 * x) + rng.normal(0, noise, n)
    term = build_term(x, SmoothSpec("x", k=6))
    design = np.column_stack([np.ones(n), term.design])
    blocks = [PenaltyBlock("x", slice(1, 6), term.penalty)]
    return design, y, blocks


# --- design assembly ----------------------------------------------------------


def test_two_province_design_has_22_columns():
    sim = small_sim(n_provinces=2)
    design = assemble_design(sim.panel, sim.true_rt, model_spec())
    assert design.x.shape[1] == 2 + 4 * 5
    assert design.province_span == slice(0, 2)
    spans = [b.span for b in design.blocks]
    assert all(s.stop - s.start == 5 for s in spans)


def test_unit_rt_gives_zero_response():
    sim = small_sim(n_provinces=2)
    rts = {p: unit_rt(s) for p, s in sim.true_rt.items()}
    design = assemble_design(sim.panel, rts, model_spec())
    assert np.all(design.y == 0.0)


def test_provisional_days_are_excluded_and_counted():
    sim = small_sim(n_provinces=2)
    rts = {}
    marked = 0
    for p, s in sim.true_rt.items():
        flags = [set(f) for f in s.flags]
        for t in range(5):
            flags[-1 - t].add("provisional")
        marked += 5
        rts[p] = RtSeries(
            s.province, s.dates, s.rt, s.adjusted, s.infections, flags, s.config
        )
    base = assemble_design(sim.panel, sim.true_rt, model_spec())
    marked_design = assemble_design(sim.panel, rts, model_spec())
    assert marked_design.x.shape[0] == base.x.shape[0] - marked
    assert marked_design.n_excluded == base.n_excluded + marked


def test_missing_series_and_bad_rt_raise():
    sim = small_sim(n_provinces=2)
    partial = dict(sim.true_rt)
    removed = sim.panel.provinces[0]
    del partial[removed]
    with pytest.raises(FitError, match="no reproductive-number series"):
        assemble_design(sim.panel, partial, model_spec())

    bad = {}
    for p, s in sim.true_rt.items():
        rt = s.rt.copy()
        rt[:] = -1.0
        bad[p] = RtSeries(p, s.dates, rt, s.adjusted, s.infections, s.flags, s.config)
    with pytest.raises(FitError, match="non-positive"):
        assemble_design(sim.panel, bad, model_spec())


# --- penalized solver -----------------------------------------------------------


def test_zero_lambda_reproduces_ols():
    design, y, blocks = single_smooth_problem(seed=0)
    fit = fit_penalized(design, y, blocks, np.zeros(1))
    residual = y - design @ fit.beta
    assert np.abs(design.T @ residual).max() < 1e-8
    beta_ols, *_ = np.linalg.lstsq(design, y, rcond=None)
    assert np.abs(fit.beta - beta_ols).max() < 1e-8


def test_huge_lambda_kills_term_edf():
    design, y, blocks = single_smooth_problem(seed=1)
    fit = fit_penalized(design, y, blocks, np.array([1e12]))
    assert fit.edf_by_block["x"] < 1e-3


def test_fitted_curve_tracks_truth_within_noise_budget():
    # frozen scenario: mild curvature, moderate smoothing; the fitted curve
    # must sit within twice the naive noise-per-point budget of the truth
    n, sigma = 900, 0.1
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0, 1, n))
    truth = 0.3 * x + 0.05 * x**2
    y = truth + rng.normal(0, sigma, n)
    term = build_term(x, SmoothSpec("x", k=6))
    design = np.column_stack([np.ones(n), term.design])
    blocks = [PenaltyBlock("x", slice(1, 6), term.penalty)]
    fit = fit_penalized(design, y, blocks, np.array([10.0]))
    rmse = float(np.sqrt(np.mean((design @ fit.beta - truth) ** 2)))
    assert rmse < 2 * sigma / np.sqrt(n)


def test_edf_is_monotone_in_lambda():
    design, y, blocks = single_smooth_problem(seed=2)
    edfs = [
        fit_penalized(design, y, blocks, np.array([lam])).edf_by_block["x"]
        for lam in np.logspace(-6, 6, 13)
    ]
    assert all(b <= a + 1e-10 for a, b in zip(edfs, edfs[1:]))


def test_singular_design_raises():
    X = np.ones((10, 2))
    with pytest.raises(FitError, match="singular"):
        fit_penalized(X, np.arange(10.0), [], np.array([]))


def test_saturated_fit_raises():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 5))
    with pytest.raises(FitError, match="degrees of freedom"):
        fit_penalized(X, rng.normal(size=5), [], np.array([]))


# --- smoothing-parameter selection ----------------------------------------------


def test_single_smooth_descent_equals_brute_force():
    for seed in range(10):
        design, y, blocks = single_smooth_problem(seed)
        lams, _ = select_lambdas_gcv(design, y, blocks, DEFAULT_GRID, sweeps=3)
        n = y.size
        best, best_score = None, np.inf
        for lam in DEFAULT_GRID:
            score = fit_penalized(design, y, blocks, np.array([lam])).gcv(n)
            if score <= best_score:
                best, best_score = lam, score
        assert lams[0] == best


def test_pure_noise_selects_heavy_smoothing():
    # a shallow spurious GCV dip appears in a minority of noise draws; the
    # batch bound reflects that while pinning the expected behavior
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, 1000)
        y = rng.normal(0, 1.0, 1000)
        term = build_term(x, SmoothSpec("x", k=6))
        design = np.column_stack([np.ones(1000), term.design])
        blocks = [PenaltyBlock("x", slice(1, 6), term.penalty)]
        lams, _ = select_lambdas_gcv(design, y, blocks, DEFAULT_GRID, sweeps=3)
        if lams[0] >= DEFAULT_GRID[-1] / 10.0:
            fit = fit_penalized(design, y, blocks, lams)
            assert fit.edf_by_block["x"] < 0.5
            hits += 1
    assert hits >= 18


def test_tied_gcv_prefers_larger_lambda():
    rng = np.random.default_rng(5)
    x = np.sort(rng.uniform(0, 1, 100))
    term = build_term(x, SmoothSpec("x", k=6))
    design = np.column_stack([np.ones(100), term.design])
    blocks = [PenaltyBlock("x", slice(1, 6), term.penalty)]
    # zero response fits exactly at every lambda: all scores tie at 0
    lams, score = select_lambdas_gcv(design, np.zeros(100), blocks, DEFAULT_GRID, sweeps=1)
    assert score == 0.0
    assert lams[0] == DEFAULT_GRID[-1]


def test_empty_grid_is_rejected():
    design, y, blocks = single_smooth_problem(seed=3)
    with pytest.raises(FitError):
        select_lambdas_gcv(design, y, blocks, np.array([]), sweeps=1)


# --- full fits -------------------------------------------------------------------


def test_fit_statistics_are_coherent():
    sim = small_sim()
    fit = fit_gam(sim.panel, sim.true_rt, model_spec(sweeps=2))
    assert fit.adjusted_r2 <= 1.0
    assert 0 < fit.total_edf < fit.n
    for name, edf in fit.edf.items():
        assert 0 <= edf <= 5.0
    # GCV consistency against its definition
    recomputed = fit.n * fit.rss / (fit.n - fit.total_edf) ** 2
    assert abs(fit.gcv_score - recomputed) <= 1e-8 * abs(fit.gcv_score)
    # covariance is symmetric PSD
    v = fit.covariance
    assert np.abs(v - v.T).max() < 1e-10
    eig = np.linalg.eigvalsh(v)
    assert eig.min() > -1e-8 * eig.max()
    # every smooth carries a Wald test with a probability in range
    for name, (stat, rank, p) in fit.wald.items():
        assert stat >= 0 and rank >= 1
        assert 1e-300 <= p <= 1.0


def test_fitted_values_ignore_term_order():
    sim = small_sim()
    spec_a = model_spec(sweeps=2)
    spec_b = model_spec(sweeps=2)
    spec_b.smooths = list(reversed(spec_b.smooths))
    fit_a = fit_gam(sim.panel, sim.true_rt, spec_a)
    fit_b = fit_gam(sim.panel, sim.true_rt, spec_b)
    for p in sim.panel.provinces:
        data = sim.panel.arrays(p)
        covs = {s.covariate: data.field(s.covariate) for s in spec_a.smooths}
        a = predict_log_rt(fit_a, covs, province=p)
        b = predict_log_rt(fit_b, covs, province=p)
        assert np.abs(a - b).max() < 1e-8


def test_constant_shift_moves_only_intercepts():
    sim = small_sim()
    spec = model_spec(sweeps=2)
    fit = fit_gam(sim.panel, sim.true_rt, spec)
    c = 0.37
    shifted = {
        p: RtSeries(
            s.province, s.dates, s.rt * np.exp(c),
            s.adjusted, s.infections, s.flags, s.config,
        )
        for p, s in sim.true_rt.items()
    }
    fit_shift = fit_gam(sim.panel, shifted, spec)
    base, moved = fit.intercepts(), fit_shift.intercepts()
    for p in sim.panel.provinces:
        assert abs(moved[p] - base[p] - c) < 1e-8
    k = len(sim.panel.provinces)
    assert np.abs(fit.coefficients[k:] - fit_shift.coefficients[k:]).max() < 1e-8


def test_intercept_only_signal_leaves_smooths_empty():
    # log R_t = province level + noise: all smooth EDFs collapse and the
    # smooth terms explain essentially nothing beyond the intercepts
    zero = {
        name: (lambda x: np.zeros_like(np.asarray(x, dtype=float)))
        for name in COVARIATES
    }
    sim = small_sim(n_provinces=10, days=160, noise=0.05, seed=6, effects=zero)
    fit = fit_gam(sim.panel, sim.true_rt, model_spec(sweeps=2))
    for name, edf in fit.edf.items():
        assert edf < 0.5

    design = assemble_design(sim.panel, sim.true_rt, model_spec(sweeps=2))
    levels = {p: i for i, p in enumerate(fit.province_levels)}
    intercept_hat = np.array(
        [fit.intercepts()[p] for p, _ in design.rows]
    )
    rss_intercept = float(np.sum((design.y - intercept_hat) ** 2))
    smooth_r2 = 1.0 - fit.rss / rss_intercept
    assert abs(smooth_r2) < 0.02


def test_model_roundtrips_through_serialization():
    sim = small_sim()
    spec = model_spec(sweeps=2)
    fit = fit_gam(sim.panel, sim.true_rt, spec)
    clone = fit_from_dict(fit_to_dict(fit))
    assert clone.province_levels == fit.province_levels
    assert np.abs(clone.coefficients - fit.coefficients).max() == 0.0
    assert clone.edf == fit.edf and clone.lambdas == fit.lambdas
    p = sim.panel.provinces[0]
    data = sim.panel.arrays(p)
    covs = {s.covariate: data.field(s.covariate) for s in spec.smooths}
    assert np.abs(
        predict_log_rt(fit, covs, province=p) - predict_log_rt(clone, covs, province=p)
    ).max() < 1e-8


def test_serialization_rejects_foreign_payloads():
    with pytest.raises(FitError):
        fit_from_dict({"format": "something-else"})
