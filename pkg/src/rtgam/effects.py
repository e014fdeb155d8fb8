"""Partial-effect curves, per-province refits, and leave-one-province-out CV."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date

import numpy as np

from .basis import SmoothSpec, basis_at
from .gam import FitError, FittedGam, ModelSpec, fit_gam, predict_log_rt
from .panel import Panel, ProvinceData
from .rt import RtSeries


@dataclass
class PartialEffect:
    """One smooth's centered effect curve with pointwise 95% bands."""

    term: str
    grid: np.ndarray
    effect: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    extrapolated: np.ndarray


@dataclass
class CvReport:
    """Leave-one-province-out results: per-fold MSE on held-out log R_t."""

    mse: dict[str, float]
    n: dict[str, int]
    pooled_mse: float
    failures: dict[str, str]
    training_provinces: dict[str, list[str]]


def partial_effects(
    fit: FittedGam, term_name: str, grid: np.ndarray | None = None, grid_size: int = 200
) -> PartialEffect:
    """Evaluate one smooth's centered effect with 95% confidence bands.

    The default grid spans the term's training range; points outside it are
    evaluated by extending the basis and flagged as extrapolated.
    """
    term = fit.term_by_name(term_name)
    lo, hi = fit.spans[term_name]
    beta = fit.coefficients[lo:hi]
    v = fit.covariance[lo:hi, lo:hi]
    dlo, dhi = term.spec.data_range
    g = np.linspace(dlo, dhi, grid_size) if grid is None else np.asarray(grid, dtype=float)
    b = basis_at(term, g)
    effect = b @ beta
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", b, v, b), 0.0, None))
    return PartialEffect(
        term_name, g, effect, se,
        effect - 1.96 * se, effect + 1.96 * se,
        (g < dlo) | (g > dhi),
    )


def _usable_rows(data: ProvinceData, series: RtSeries) -> tuple[list[int], np.ndarray]:
    """Panel row indices with a defined, non-provisional estimate, and log R_t."""
    usable = series.usable()
    by_date = {d: t for t, d in enumerate(series.dates)}
    idx: list[int] = []
    logs: list[float] = []
    for i, d in enumerate(data.dates):
        t = by_date.get(d)
        if t is None or not usable[t]:
            continue
        idx.append(i)
        logs.append(float(np.log(series.rt[t])))
    return idx, np.array(logs)


def _subpanel(panel: Panel, provinces: list[str]) -> Panel:
    rows = [r for r in panel.rows if r.province in set(provinces)]
    return Panel(rows, sorted(provinces), panel.window)


def _fresh_spec(spec: ModelSpec) -> ModelSpec:
    # Knots and data ranges must be re-chosen from each fit's own data.
    return ModelSpec(
        [SmoothSpec(s.covariate, s.k) for s in spec.smooths],
        spec.lambda_grid.copy(),
        spec.sweeps,
        spec.response,
    )


def min_rows_for(spec: ModelSpec) -> int:
    """Smallest per-province sample a single-province fit will accept."""
    basis_cols = 1 + sum(s.k - 1 for s in spec.smooths)
    return basis_cols + 5


def fit_per_province(
    panel: Panel,
    rts: dict[str, RtSeries],
    spec: ModelSpec,
    jobs: int = 1,
) -> tuple[dict[str, FittedGam], dict[str, str]]:
    """Refit the model separately within each province (own knots, own GCV).

    Provinces with too few usable rows (fewer than the basis column count
    plus five) are skipped and reported, not fitted.
    """
    floor = min_rows_for(spec)
    eligible: list[str] = []
    skipped: dict[str, str] = {}
    for p in panel.provinces:
        if p not in rts:
            skipped[p] = "no reproductive-number series"
            continue
        idx, _ = _usable_rows(panel.arrays(p), rts[p])
        if len(idx) <= floor:
            skipped[p] = f"only {len(idx)} usable rows, need more than {floor}"
            continue
        eligible.append(p)

    def _one(p: str) -> tuple[str, FittedGam | None, str | None]:
        try:
            fit = fit_gam(_subpanel(panel, [p]), {p: rts[p]}, _fresh_spec(spec))
            return p, fit, None
        except (FitError, ValueError) as exc:
            return p, None, str(exc)

    if jobs > 1 and len(eligible) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, eligible))
    else:
        results = [_one(p) for p in eligible]

    fits: dict[str, FittedGam] = {}
    for p, fit, err in sorted(results, key=lambda r: r[0]):
        if fit is not None:
            fits[p] = fit
        else:
            skipped[p] = err
    return fits, skipped


def lopo_cv(
    panel: Panel,
    rts: dict[str, RtSeries],
    spec: ModelSpec,
    jobs: int = 1,
) -> CvReport:
    """Leave-one-province-out cross-validation.

    Each fold refits on the remaining provinces and predicts the held-out
    province's log R_t using the smooths plus the mean training intercept.
    Fold failures are recorded and do not stop the other folds.
    """
    provinces = list(panel.provinces)
    if len(provinces) < 3:
        raise FitError(f"leave-one-out needs at least 3 provinces, got {len(provinces)}")

    training: dict[str, list[str]] = {
        held: [p for p in provinces if p != held] for held in provinces
    }

    def _one(held: str) -> tuple[str, float | None, int, str | None]:
        train = training[held]
        sub = _subpanel(panel, train)
        assert held not in sub.provinces  # fold isolation by construction
        try:
            fit = fit_gam(sub, {p: rts[p] for p in train}, _fresh_spec(spec))
            data = panel.arrays(held)
            idx, y = _usable_rows(data, rts[held])
            if not idx:
                return held, None, 0, "no usable rows to score"
            covs = {
                s.covariate: data.field(s.covariate)[idx] for s in spec.smooths
            }
            pred = predict_log_rt(fit, covs, province=held)
            return held, float(np.mean((pred - y) ** 2)), len(idx), None
        except (FitError, ValueError) as exc:
            return held, None, 0, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, provinces))
    else:
        results = [_one(p) for p in provinces]

    mse: dict[str, float] = {}
    n: dict[str, int] = {}
    failures: dict[str, str] = {}
    sse_total = 0.0
    n_total = 0
    for held, fold_mse, fold_n, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            failures[held] = err
            continue
        mse[held] = fold_mse
        n[held] = fold_n
        sse_total += fold_mse * fold_n
        n_total += fold_n
    pooled = sse_total / n_total if n_total else float("nan")
    return CvReport(mse, n, pooled, failures, training)
