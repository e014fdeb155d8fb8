"""Penalized additive model of log reproductive numbers.

The model is log(R_t) = province intercept + four centered smooths, with no
global intercept: the province indicator columns span the constant.  Each
smooth contributes one unpenalized linear column and k - 2 curvature columns
whose single shared penalty weight is chosen by generalized cross-validation
on a fixed grid with coordinate descent.

EDF bookkeeping: a term's reported EDF is the influence-matrix trace over
its penalized columns, so a fully shrunk term reports EDF near zero while
its affine content remains available through the unpenalized linear column.
The total EDF (used for sigma^2 and GCV) is the trace over all columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

import numpy as np
from scipy import linalg, stats

from .basis import SmoothSpec, SmoothTerm, basis_at, build_term, term_from_params
from .panel import Panel
from .rt import RtSeries

DEFAULT_GRID = np.logspace(-6.0, 6.0, 61)
P_FLOOR = 1e-300
RANK_TOL = 1e-8


class FitError(ValueError):
    """Raised for singular or under-determined penalized systems."""


@dataclass
class ModelSpec:
    """What to fit: which covariates get smooths, basis size, search grid."""

    smooths: list[SmoothSpec]
    lambda_grid: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())
    sweeps: int = 3
    response: str = "log_rt"

    def __post_init__(self) -> None:
        g = np.asarray(self.lambda_grid, dtype=float)
        if g.ndim != 1 or g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise FitError("lambda grid must be positive and strictly increasing")
        self.lambda_grid = g


@dataclass
class PenaltyBlock:
    """A contiguous design span with one embedded penalty matrix."""

    name: str
    span: slice
    penalty: np.ndarray  # (width, width), PSD; zero rows mark unpenalized columns

    def penalized_columns(self) -> np.ndarray:
        """Absolute design-column indices carrying penalty."""
        local = np.where(np.diag(self.penalty) > 0)[0]
        return local + self.span.start


@dataclass
class Design:
    """Assembled regression problem plus the pieces needed to interpret it."""

    x: np.ndarray
    y: np.ndarray
    blocks: list[PenaltyBlock]
    terms: list[SmoothTerm]
    province_levels: list[str]
    province_span: slice
    rows: list[tuple[str, date]]
    n_excluded: int


@dataclass
class PenalizedFit:
    beta: np.ndarray
    rss: float
    edf_by_block: dict[str, float]
    total_edf: float
    vbeta: np.ndarray
    sigma2: float

    def gcv(self, n: int) -> float:
        return n * self.rss / (n - self.total_edf) ** 2


@dataclass
class FittedGam:
    """A fitted model: coefficients, uncertainty, and per-term summaries."""

    response: str
    province_levels: list[str]
    coefficients: np.ndarray
    covariance: np.ndarray
    terms: list[SmoothTerm]
    spans: dict[str, tuple[int, int]]
    lambdas: dict[str, float]
    edf: dict[str, float]
    wald: dict[str, tuple[float, int, float]]
    sigma2: float
    rss: float
    n: int
    n_excluded: int
    total_edf: float
    gcv_score: float
    adjusted_r2: float

    def intercepts(self) -> dict[str, float]:
        lo, hi = self.spans["province"]
        return dict(zip(self.province_levels, self.coefficients[lo:hi]))

    def term_by_name(self, name: str) -> SmoothTerm:
        for t in self.terms:
            if t.spec.covariate == name:
                return t
        raise FitError(f"no smooth term named '{name}'")


def _penalty_sqrt(s: np.ndarray) -> np.ndarray:
    # Symmetric square root; tiny negative eigenvalues from roundoff clip to 0.
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fit_penalized(
    design: np.ndarray,
    y: np.ndarray,
    blocks: list[PenaltyBlock],
    lambdas: np.ndarray,
) -> PenalizedFit:
    """Solve (X'X + sum_j lambda_j S_j) beta = X'y by augmented least squares.

    Returns coefficients, RSS, per-block EDF (trace over each block's
    penalized columns), total EDF, and V_beta = (X'X + sum lambda S)^-1
    sigma^2 with sigma^2 = RSS / (n - total EDF).
    """
    x = np.asarray(design, dtype=float)
    yv = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(yv))):
        raise FitError("design and response must be finite")
    n, p = x.shape
    if yv.shape != (n,):
        raise FitError("response length must match design rows")
    lam = np.asarray(lambdas, dtype=float)
    if lam.shape != (len(blocks),):
        raise FitError("need one lambda per penalty block")
    if np.any(lam < 0):
        raise FitError("lambdas must be non-negative")

    aug_rows = [x]
    for lam_j, block in zip(lam, blocks):
        if lam_j == 0.0:
            continue
        half = _penalty_sqrt(block.penalty)
        embedded = np.zeros((half.shape[0], p))
        embedded[:, block.span] = half
        aug_rows.append(np.sqrt(lam_j) * embedded)
    xaug = np.vstack(aug_rows)

    q, r = np.linalg.qr(xaug)
    rdiag = np.abs(np.diag(r))
    if rdiag.min() <= max(xaug.shape) * np.finfo(float).eps * rdiag.max():
        raise FitError("singular design after penalty augmentation")
    yaug = np.concatenate([yv, np.zeros(xaug.shape[0] - n)])
    beta = linalg.solve_triangular(r, q.T @ yaug)

    rinv = linalg.solve_triangular(r, np.eye(p))
    ainv = rinv @ rinv.T
    xtx = x.T @ x
    influence = ainv @ xtx
    diag_infl = np.diag(influence)
    total_edf = float(np.trace(influence))

    edf_by_block = {
        b.name: float(diag_infl[b.penalized_columns()].sum()) for b in blocks
    }
    resid = yv - x @ beta
    rss = float(resid @ resid)
    if n <= total_edf:
        raise FitError(f"model consumes all degrees of freedom (n={n}, EDF={total_edf:.2f})")
    sigma2 = rss / (n - total_edf)
    vbeta = ainv * sigma2
    return PenalizedFit(beta, rss, edf_by_block, total_edf, vbeta, sigma2)


def select_lambdas_gcv(
    design: np.ndarray,
    y: np.ndarray,
    blocks: list[PenaltyBlock],
    grid: np.ndarray | None = None,
    sweeps: int = 3,
) -> tuple[np.ndarray, float]:
    """Choose per-block penalty weights by coordinate descent on the GCV score.

    GCV(lambda) = n * RSS / (n - trace(A))^2.  Each pass sets one block's
    lambda to the exhaustive grid argmin holding the others fixed; ties
    resolve to the larger lambda.  Grid points where the system is singular
    are skipped; it is an error if every point fails.
    """
    g = DEFAULT_GRID.copy() if grid is None else np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
        raise FitError("lambda grid must be positive and strictly increasing")
    n = len(y)
    lam = np.ones(len(blocks))
    last_score = None
    for _ in range(max(1, sweeps)):
        for j in range(len(blocks)):
            best_val = None
            best_score = np.inf
            for cand in g:
                trial = lam.copy()
                trial[j] = cand
                try:
                    fit = fit_penalized(design, y, blocks, trial)
                except FitError:
                    continue
                score = fit.gcv(n)
                if score <= best_score:
                    best_score = score
                    best_val = cand
            if best_val is None:
                raise FitError("every lambda grid point produced a singular system")
            lam[j] = best_val
            last_score = best_score
    return lam, float(last_score)


def assemble_design(
    panel: Panel, rts: dict[str, RtSeries], spec: ModelSpec
) -> Design:
    """Join the panel with usable R_t days and lay out the design matrix.

    Columns are [province indicators | term blocks], each term block being
    [linear | curvature columns].  Days whose R_t is undefined or provisional
    are excluded and counted.
    """
    provinces = panel.provinces
    for p in provinces:
        if p not in rts:
            raise FitError(f"province '{p}' has no reproductive-number series")

    rows: list[tuple[str, date]] = []
    y_parts: list[float] = []
    cov_parts: dict[str, list[float]] = {s.covariate: [] for s in spec.smooths}
    prov_idx: list[int] = []
    n_excluded = 0

    for pi, prov in enumerate(provinces):
        data = panel.arrays(prov)
        series = rts[prov]
        usable = series.usable()
        by_date = {d: t for t, d in enumerate(series.dates)}
        for ri, d in enumerate(data.dates):
            t = by_date.get(d)
            if t is None or not usable[t]:
                n_excluded += 1
                continue
            rt_val = series.rt[t]
            if rt_val <= 0:
                raise FitError(f"non-positive R_t for {prov} on {d}")
            rows.append((prov, d))
            y_parts.append(np.log(rt_val))
            prov_idx.append(pi)
            for s in spec.smooths:
                cov_parts[s.covariate].append(data.field(s.covariate)[ri])

    if not rows:
        raise FitError("no usable rows after excluding undefined and provisional days")

    n = len(rows)
    y = np.array(y_parts)
    indicators = np.zeros((n, len(provinces)))
    indicators[np.arange(n), prov_idx] = 1.0

    terms = [build_term(np.array(cov_parts[s.covariate]), s) for s in spec.smooths]
    col = len(provinces)
    blocks: list[PenaltyBlock] = []
    x_parts = [indicators]
    for term in terms:
        width = term.ncols
        blocks.append(PenaltyBlock(term.spec.covariate, slice(col, col + width), term.penalty))
        x_parts.append(term.design)
        col += width

    return Design(
        np.hstack(x_parts),
        y,
        blocks,
        terms,
        list(provinces),
        slice(0, len(provinces)),
        rows,
        n_excluded,
    )


def _wald_test(
    x_block: np.ndarray, beta_block: np.ndarray, v_block: np.ndarray
) -> tuple[float, int, float]:
    # W = f' V_f^- f with f = X_j beta_j and V_f = X_j V_j X_j'; computed in
    # the column space of X_j so no n-by-n matrix is formed.
    u, d, wt = np.linalg.svd(x_block, full_matrices=False)
    keep = d > d.max() * 1e-12 if d.size else np.zeros(0, dtype=bool)
    d, wt = d[keep], wt[keep]
    m = (d[:, None] * wt) @ v_block @ (wt.T * d[None, :])
    c = d * (wt @ beta_block)
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if vals.size == 0 or vals.max() <= 0:
        return 0.0, 0, 1.0
    keep = vals > RANK_TOL * vals.max()
    rank = int(keep.sum())
    proj = vecs[:, keep].T @ c
    stat = float(proj @ (proj / vals[keep]))
    pval = float(stats.chi2.sf(stat, rank)) if rank else 1.0
    return stat, rank, max(pval, P_FLOOR)


def fit_gam(panel: Panel, rts: dict[str, RtSeries], spec: ModelSpec) -> FittedGam:
    """Assemble, select penalties by GCV, and fit the final model."""
    dm = assemble_design(panel, rts, spec)
    lam, gcv_score = select_lambdas_gcv(dm.x, dm.y, dm.blocks, spec.lambda_grid, spec.sweeps)
    fit = fit_penalized(dm.x, dm.y, dm.blocks, lam)

    n = len(dm.y)
    tss = float(np.sum((dm.y - dm.y.mean()) ** 2))
    if tss > 0 and n - 1 > 0:
        adjusted_r2 = 1.0 - (fit.rss / (n - fit.total_edf)) / (tss / (n - 1))
    else:
        adjusted_r2 = float("nan")

    spans: dict[str, tuple[int, int]] = {
        "province": (dm.province_span.start, dm.province_span.stop)
    }
    lambdas: dict[str, float] = {}
    wald: dict[str, tuple[float, int, float]] = {}
    for block, lam_j in zip(dm.blocks, lam):
        spans[block.name] = (block.span.start, block.span.stop)
        lambdas[block.name] = float(lam_j)
        xb = dm.x[:, block.span]
        bb = fit.beta[block.span]
        vb = fit.vbeta[block.span, block.span]
        wald[block.name] = _wald_test(xb, bb, vb)

    return FittedGam(
        response=spec.response,
        province_levels=dm.province_levels,
        coefficients=fit.beta,
        covariance=fit.vbeta,
        terms=dm.terms,
        spans=spans,
        lambdas=lambdas,
        edf=dict(fit.edf_by_block),
        wald=wald,
        sigma2=fit.sigma2,
        rss=fit.rss,
        n=n,
        n_excluded=dm.n_excluded,
        total_edf=fit.total_edf,
        gcv_score=gcv_score,
        adjusted_r2=adjusted_r2,
    )


def predict_log_rt(
    fit: FittedGam,
    covariates: dict[str, np.ndarray],
    province: str | None = None,
) -> np.ndarray:
    """Predict log R_t from covariate values.

    Uses the province's own intercept when it was in the training set,
    otherwise (or when province is None) the mean of the training
    intercepts.  Covariates outside the training range extrapolate the
    basis functions.
    """
    intercepts = fit.intercepts()
    if province is not None and province in intercepts:
        level = intercepts[province]
    else:
        level = float(np.mean(list(intercepts.values())))

    pred = None
    for term in fit.terms:
        name = term.spec.covariate
        if name not in covariates:
            raise FitError(f"missing covariate '{name}' for prediction")
        lo, hi = fit.spans[name]
        vals = basis_at(term, np.asarray(covariates[name], dtype=float)) @ fit.coefficients[lo:hi]
        pred = vals if pred is None else pred + vals
    return level + pred


def fit_to_dict(fit: FittedGam) -> dict:
    """Serializable view of a fitted model (pure JSON types)."""
    return {
        "format": "rtgam-model",
        "version": 1,
        "response": fit.response,
        "province_levels": list(fit.province_levels),
        "coefficients": fit.coefficients.tolist(),
        "covariance": fit.covariance.tolist(),
        "terms": [
            {
                "covariate": t.spec.covariate,
                "k": t.spec.k,
                "knots": t.spec.knots.tolist(),
                "data_range": list(t.spec.data_range),
                "offset": t.offset.tolist(),
            }
            for t in fit.terms
        ],
        "spans": {k: list(v) for k, v in fit.spans.items()},
        "lambdas": dict(fit.lambdas),
        "edf": dict(fit.edf),
        "wald": {k: {"stat": v[0], "rank": v[1], "p": v[2]} for k, v in fit.wald.items()},
        "sigma2": fit.sigma2,
        "rss": fit.rss,
        "n": fit.n,
        "n_excluded": fit.n_excluded,
        "total_edf": fit.total_edf,
        "gcv_score": fit.gcv_score,
        "adjusted_r2": fit.adjusted_r2,
    }


def fit_from_dict(payload: dict) -> FittedGam:
    """Rebuild a fitted model from its serialized form."""
    if payload.get("format") != "rtgam-model":
        raise FitError("not a serialized model file")
    terms = [
        term_from_params(
            t["covariate"],
            int(t["k"]),
            np.array(t["knots"], dtype=float),
            (float(t["data_range"][0]), float(t["data_range"][1])),
            np.array(t["offset"], dtype=float),
        )
        for t in payload["terms"]
    ]
    return FittedGam(
        response=payload["response"],
        province_levels=list(payload["province_levels"]),
        coefficients=np.array(payload["coefficients"], dtype=float),
        covariance=np.array(payload["covariance"], dtype=float),
        terms=terms,
        spans={k: (int(v[0]), int(v[1])) for k, v in payload["spans"].items()},
        lambdas={k: float(v) for k, v in payload["lambdas"].items()},
        edf={k: float(v) for k, v in payload["edf"].items()},
        wald={
            k: (float(v["stat"]), int(v["rank"]), float(v["p"]))
            for k, v in payload["wald"].items()
        },
        sigma2=float(payload["sigma2"]),
        rss=float(payload["rss"]),
        n=int(payload["n"]),
        n_excluded=int(payload["n_excluded"]),
        total_edf=float(payload["total_edf"]),
        gcv_score=float(payload["gcv_score"]),
        adjusted_r2=float(payload["adjusted_r2"]),
    )
