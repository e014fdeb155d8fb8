"""One-dimensional thin-plate regression splines.

Each smooth is built from the cubic radial basis phi(r) = r^3 placed at
quantile knots, plus the affine functions that span the curvature-penalty
null space.  The affine side conditions are absorbed by an orthogonal
projection of the radial coefficients, the covariate is rescaled to [0, 1],
and every column is centered to sum to zero over the training sample, so a
term of basis dimension k contributes k - 1 design columns: one unpenalized
linear column followed by k - 2 penalized curvature columns.

The penalty matrix S is the integrated squared second derivative of the
represented function, expressed in the rescaled coordinate.  It is zero on
the linear column and positive definite on the curvature block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BasisError(ValueError):
    """Raised for unusable covariate data or malformed basis requests."""


@dataclass
class SmoothSpec:
    """Configuration of a single smooth term.

    covariate: name of the panel column the term applies to.
    k: basis dimension before identifiability constraints (>= 3).
    knots: strictly increasing knot vector, chosen from data when None.
    data_range: (lo, hi) used for rescaling, taken from data when None.
    """

    covariate: str
    k: int = 6
    knots: np.ndarray | None = None
    data_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.k < 3:
            raise BasisError(f"basis dimension must be >= 3, got {self.k}")
        if self.knots is not None:
            kn = np.asarray(self.knots, dtype=float)
            if kn.ndim != 1 or kn.size != self.k:
                raise BasisError("knot vector length must equal k")
            if not np.all(np.diff(kn) > 0):
                raise BasisError("knots must be strictly increasing")
            self.knots = kn


@dataclass
class SmoothTerm:
    """A built smooth: basis, penalty, and the transforms needed to reuse it."""

    spec: SmoothSpec
    design: np.ndarray        # (n, k-1), columns sum to zero
    penalty: np.ndarray       # (k-1, k-1), PSD, zero row/col for the linear column
    offset: np.ndarray        # (k-1,) column means removed from the raw basis
    projector: np.ndarray     # (k, k-2) null-space absorber, derived from knots

    @property
    def ncols(self) -> int:
        return self.spec.k - 1

    @property
    def penalized(self) -> slice:
        """Columns of the design block carrying curvature penalty."""
        return slice(1, self.spec.k - 1)


def choose_knots(values: np.ndarray, k: int) -> np.ndarray:
    """Return k quantile-spaced knots covering [min, max] of the data.

    Raises BasisError when the data has fewer than k distinct values or when
    ties collapse the quantiles below k distinct knots.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise BasisError("knot selection needs a non-empty 1-d sample")
    if not np.all(np.isfinite(v)):
        raise BasisError("knot selection needs finite values")
    if np.unique(v).size < k:
        raise BasisError(
            f"need at least {k} distinct covariate values, got {np.unique(v).size}"
        )
    probs = np.linspace(0.0, 1.0, k)
    knots = np.quantile(v, probs)
    if not np.all(np.diff(knots) > 0):
        raise BasisError("ties in the sample collapse the quantile knots")
    return knots


def _rescaled(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (x - lo) / (hi - lo)


def _radial(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    return np.abs(x[:, None] - knots[None, :]) ** 3


def _null_projector(knots: np.ndarray) -> np.ndarray:
    # Orthonormal basis of {delta : sum delta = 0, sum delta*knot = 0}; the
    # radial coefficients are constrained there so the affine part of the
    # fit lives entirely in the explicit linear column.
    k = knots.size
    t = np.column_stack([np.ones(k), knots])
    q, _ = np.linalg.qr(t, mode="complete")
    return q[:, 2:]


def _curvature_penalty(knots: np.ndarray, z: np.ndarray) -> np.ndarray:
    # For f(x) = sum_i delta_i |x - knot_i|^3 with the affine side conditions,
    # integral of f''(x)^2 equals 12 * delta' E delta, E_ij = |k_i - k_j|^3.
    e = np.abs(knots[:, None] - knots[None, :]) ** 3
    s = 12.0 * (z.T @ e @ z)
    return 0.5 * (s + s.T)


def _raw_columns(x01: np.ndarray, knots01: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.column_stack([x01, _radial(x01, knots01) @ z])


def build_term(values: np.ndarray, spec: SmoothSpec) -> SmoothTerm:
    """Construct the design block and curvature penalty for one covariate.

    The returned design has k - 1 sum-to-zero columns; the penalty is PSD
    with the linear column in its null space.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise BasisError("build_term needs a non-empty 1-d sample")
    if not np.all(np.isfinite(v)):
        raise BasisError("build_term needs finite values")

    knots = spec.knots if spec.knots is not None else choose_knots(v, spec.k)
    lo, hi = spec.data_range if spec.data_range is not None else (v.min(), v.max())
    if not hi > lo:
        raise BasisError("covariate has zero range")

    knots01 = _rescaled(np.asarray(knots, dtype=float), lo, hi)
    z = _null_projector(knots01)
    raw = _raw_columns(_rescaled(v, lo, hi), knots01, z)
    offset = raw.mean(axis=0)

    k = spec.k
    penalty = np.zeros((k - 1, k - 1))
    penalty[1:, 1:] = _curvature_penalty(knots01, z)

    built = SmoothSpec(spec.covariate, k, np.asarray(knots, dtype=float), (float(lo), float(hi)))
    return SmoothTerm(built, raw - offset, penalty, offset, z)


def term_from_params(
    covariate: str,
    k: int,
    knots: np.ndarray,
    data_range: tuple[float, float],
    offset: np.ndarray,
) -> SmoothTerm:
    """Rebuild a term from serialized parameters (no training design)."""
    spec = SmoothSpec(covariate, k, np.asarray(knots, dtype=float), data_range)
    lo, hi = data_range
    knots01 = _rescaled(spec.knots, lo, hi)
    z = _null_projector(knots01)
    penalty = np.zeros((k - 1, k - 1))
    penalty[1:, 1:] = _curvature_penalty(knots01, z)
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (k - 1,):
        raise BasisError("centering offset length must equal k - 1")
    return SmoothTerm(spec, np.empty((0, k - 1)), penalty, offset, z)


def evaluate_term(
    term: SmoothTerm, coefficients: np.ndarray, at: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the centered smooth at new covariate values.

    Returns (values, extrapolated) where extrapolated flags points outside
    the training data range.  Evaluation at the training points reproduces
    design @ coefficients.
    """
    beta = np.asarray(coefficients, dtype=float)
    if beta.shape != (term.ncols,):
        raise BasisError(
            f"expected {term.ncols} coefficients for '{term.spec.covariate}', got {beta.shape}"
        )
    x = np.asarray(at, dtype=float)
    if not np.all(np.isfinite(x)):
        raise BasisError("evaluation points must be finite")
    lo, hi = term.spec.data_range
    basis = basis_at(term, x)
    return basis @ beta, (x < lo) | (x > hi)


def basis_at(term: SmoothTerm, at: np.ndarray) -> np.ndarray:
    """Centered basis rows for new covariate values (used for prediction bands)."""
    lo, hi = term.spec.data_range
    knots01 = _rescaled(term.spec.knots, lo, hi)
    raw = _raw_columns(_rescaled(np.asarray(at, dtype=float), lo, hi), knots01, term.projector)
    return raw - term.offset
