"""Deterministic least-squares and logistic fitting with robust covariances.

Everything here is a pure function of its inputs.  Fits are immutable
dataclasses and safe to share across threads.  Rank problems raise instead of
silently dropping columns, because the simulation harness counts failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit
from scipy.stats import norm

from .errors import (
    LeverageOneError,
    NotConvergedError,
    RankDeficientError,
)

# pivot below this fraction of the largest pivot counts as rank deficiency
PIVOT_RTOL = 1e-10

IRLS_TOL = 1e-8
# the score-based stop is kept near machine zero so that saturated models
# reproduce closed-form answers (group means) to 1e-10 or better; ordinary
# fits stop on the coefficient-change criterion instead
IRLS_SCORE_TOL = 1e-11
IRLS_MAX_ITER = 25
# a fit still walking at the cap counts as a boundary optimum when its
# deviance improves by less than this per iteration (relative); separation
# walks shrink the deviance geometrically, so anything genuinely divergent
# or oscillating stays above this
PLATEAU_RTOL = 1e-4

# |coefficient| beyond this, or fitted probabilities this close to {0, 1},
# flag the fit as separated
SEPARATION_COEF_BOUND = 15.0
SEPARATION_PROB_EPS = 1e-10

LEVERAGE_EPS = 1e-12


@dataclass(frozen=True)
class LinearFit:
    """Least-squares fit: coefficients plus the pieces robust SEs need."""

    coefficients: np.ndarray
    residuals: np.ndarray
    hat_diagonals: np.ndarray
    covariance: np.ndarray
    covariance_kind: str  # "HC0" | "HC3" | "weighted-sandwich"
    weights: np.ndarray | None = None


@dataclass(frozen=True)
class LogisticFit:
    """Logistic MLE via IRLS.

    ``covariance`` is the inverse observed information (or the weighted
    sandwich when prior weights were supplied); it is None when the
    information matrix is numerically singular at the final iterate, which is
    the signature of a (quasi-)separated fit.
    """

    coefficients: np.ndarray
    covariance: np.ndarray | None
    converged: bool
    iterations: int
    max_abs_score: float
    separation_flag: bool
    probabilities: np.ndarray = field(repr=False, default=None)
    residuals: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray | None = field(repr=False, default=None)


def _as_design(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("design matrix must be 2-dimensional")
    if not np.isfinite(X).all():
        raise ValueError("design matrix contains non-finite values")
    if X.shape[0] < X.shape[1]:
        raise RankDeficientError(
            f"{X.shape[0]} rows cannot support {X.shape[1]} parameters"
        )
    return X


def _checked_qr(M: np.ndarray, on_deficient: type[Exception] = RankDeficientError):
    """Reduced QR with the pivot-magnitude rank check."""
    Q, R = np.linalg.qr(M)
    piv = np.abs(np.diag(R))
    if piv.size == 0 or piv.max() == 0.0 or piv.min() < PIVOT_RTOL * piv.max():
        raise on_deficient("design matrix is numerically rank deficient")
    return Q, R


def _xtx_inverse(R: np.ndarray) -> np.ndarray:
    """(M'M)^-1 from the R factor of M's QR decomposition."""
    r_inv = solve_triangular(R, np.eye(R.shape[0]))
    return r_inv @ r_inv.T


def fit_ols(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> LinearFit:
    """Ordinary (or weighted) least squares via QR.

    The default covariance is HC0 for an unweighted fit and the
    fixed-weights sandwich for a weighted one; callers wanting HC3 use
    :func:`hc3_covariance`.

    Raises RankDeficientError when a pivot falls below ``PIVOT_RTOL`` times
    the largest pivot.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise ValueError("response length does not match design rows")
    if not np.isfinite(y).all():
        raise ValueError("response contains non-finite values")

    if weights is None:
        Q, R = _checked_qr(X)
        beta = solve_triangular(R, Q.T @ y)
        residuals = y - X @ beta
        hat = np.einsum("ij,ij->i", Q, Q)
        xtx_inv = _xtx_inverse(R)
        meat = (X * residuals[:, None] ** 2).T @ X
        cov = xtx_inv @ meat @ xtx_inv
        return LinearFit(beta, residuals, hat, cov, "HC0")

    w = np.asarray(weights, dtype=float)
    if w.shape != y.shape:
        raise ValueError("weights length does not match response")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("weights must be finite and nonnegative")
    sw = np.sqrt(w)
    Q, R = _checked_qr(sw[:, None] * X)
    beta = solve_triangular(R, Q.T @ (sw * y))
    residuals = y - X @ beta
    hat = np.einsum("ij,ij->i", Q, Q)
    bread_inv = _xtx_inverse(R)  # (X'WX)^-1
    meat = (X * (w * residuals)[:, None] ** 2).T @ X
    cov = bread_inv @ meat @ bread_inv
    return LinearFit(beta, residuals, hat, cov, "weighted-sandwich", weights=w)


def hc3_covariance(fit: LinearFit, X: np.ndarray) -> np.ndarray:
    """HC3 sandwich: squared residuals inflated by (1 - h_ii)^-2.

    Raises LeverageOneError when any hat diagonal is numerically 1 (a
    self-fitting observation; the caller records a method failure).
    """
    if fit.weights is not None:
        raise ValueError("HC3 is defined here for unweighted fits only")
    X = np.asarray(X, dtype=float)
    h = fit.hat_diagonals
    if (h >= 1.0 - LEVERAGE_EPS).any():
        raise LeverageOneError("hat diagonal numerically equal to 1")
    _, R = _checked_qr(X)
    xtx_inv = _xtx_inverse(R)
    omega = (fit.residuals / (1.0 - h)) ** 2
    meat = (X * omega[:, None]).T @ X
    return xtx_inv @ meat @ xtx_inv


def _binomial_deviance(y: np.ndarray, prob: np.ndarray, w: np.ndarray) -> float:
    """-2 log-likelihood, with 0*log(0) treated as 0 at saturated points."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ll_terms = np.where(y == 1.0, np.log(prob), np.log1p(-prob))
    ll_terms = np.where(np.isfinite(ll_terms), ll_terms, -745.0)  # log(min double)
    return float(-2.0 * (w * ll_terms).sum())


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
) -> LogisticFit:
    """Logit-link binomial fit by IRLS from a zero start.

    Converged once the max absolute coefficient change drops to ``tol`` or
    the max absolute score component is numerically zero.  A fit that is
    still walking at the
    iteration cap is accepted as converged when its deviance has plateaued
    (relative change below ``PLATEAU_RTOL`` per iteration, the deviance-based
    criterion GLM software uses); such boundary fits come back with
    ``separation_flag`` set rather than raising, since several estimators can
    use their predictions even when the coefficients are not interpretable.
    Anything else at the cap raises NotConvergedError.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise ValueError("response length does not match design rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic response must be 0/1")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape:
            raise ValueError("weights length does not match response")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("weights must be finite and nonnegative")

    n, p = X.shape
    beta = np.zeros(p)
    converged = False
    iterations = 0
    deviance_prev = None
    deviance_plateaued = False

    for it in range(1, max_iter + 1):
        eta = X @ beta
        prob = expit(eta)
        score = X.T @ (w * (y - prob))
        if np.abs(score).max() <= IRLS_SCORE_TOL:
            converged = True
            break
        irls_w = w * prob * (1.0 - prob)
        # at the zero start the irls weights are uniform, so the first
        # iteration's pivot ratios are those of X itself and double as the
        # design rank check
        _, R = _checked_qr(
            np.sqrt(irls_w)[:, None] * X,
            on_deficient=RankDeficientError if it == 1 else NotConvergedError,
        )
        # (X'WX) step = score, solved through the R factor so saturated rows
        # (irls weight exactly 0) still contribute their score
        half = solve_triangular(R, score, trans=1)
        step = solve_triangular(R, half)
        if not np.isfinite(step).all():
            raise NotConvergedError("IRLS step is non-finite")
        beta = beta + step
        iterations = it
        if it >= max_iter - 1:  # plateau detection needs the final pair only
            deviance = _binomial_deviance(y, expit(X @ beta), w)
            if deviance_prev is not None:
                deviance_plateaued = (
                    abs(deviance - deviance_prev)
                    <= PLATEAU_RTOL * (abs(deviance) + 0.1)
                )
            deviance_prev = deviance
        if np.abs(step).max() <= tol:
            converged = True
            break

    if iterations == 0:
        _checked_qr(X)  # a zero-iteration exact fit still validates the design

    eta = X @ beta
    prob = expit(eta)
    score = X.T @ (w * (y - prob))
    max_abs_score = float(np.abs(score).max())
    if not converged and not deviance_plateaued:
        raise NotConvergedError(
            f"IRLS did not converge in {max_iter} iterations "
            f"(max |score| = {max_abs_score:.3g})"
        )
    converged = True

    separated = bool(
        np.abs(beta).max() > SEPARATION_COEF_BOUND
        or prob.min() < SEPARATION_PROB_EPS
        or prob.max() > 1.0 - SEPARATION_PROB_EPS
    )

    irls_w = w * prob * (1.0 - prob)
    covariance: np.ndarray | None
    try:
        _, R = _checked_qr(np.sqrt(irls_w)[:, None] * X)
    except RankDeficientError:
        covariance = None
    else:
        if weights is None:
            covariance = _xtx_inverse(R)  # inverse observed information
        else:
            bread_inv = _xtx_inverse(R)
            meat = (X * (w * (y - prob))[:, None] ** 2).T @ X
            covariance = bread_inv @ meat @ bread_inv

    return LogisticFit(
        coefficients=beta,
        covariance=covariance,
        converged=converged,
        iterations=iterations,
        max_abs_score=max_abs_score,
        separation_flag=separated,
        probabilities=prob,
        residuals=y - prob,
        weights=None if weights is None else w,
    )


def weighted_sandwich_covariance(
    fit: LinearFit | LogisticFit, X: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """A^-1 B A^-1 with bread A = sum w_i d2l_i and meat B = sum w_i^2 s_i s_i'.

    Weights are treated as fixed constants.  With unit weights and a linear
    fit this reduces to HC0.
    """
    X = np.asarray(X, dtype=float)
    w = np.asarray(weights, dtype=float)
    resid = fit.residuals
    if isinstance(fit, LogisticFit):
        prob = fit.probabilities
        bread_w = w * prob * (1.0 - prob)
    else:
        bread_w = w
    _, R = _checked_qr(np.sqrt(bread_w)[:, None] * X)
    bread_inv = _xtx_inverse(R)
    meat = (X * (w * resid)[:, None] ** 2).T @ X
    return bread_inv @ meat @ bread_inv


def wald_ci(point: float, se: float, level: float = 0.95) -> tuple[float, float]:
    """point +/- z_{(1+level)/2} * se."""
    if se < 0:
        raise ValueError("standard error must be nonnegative")
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must be inside (0, 1)")
    z = norm.ppf(0.5 * (1.0 + level))
    return point - z * se, point + z * se
