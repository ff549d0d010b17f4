"""The treatment-effect estimators.

Nine risk-difference methods and the matching odds-ratio family, each
returning a uniform :class:`EffectEstimate`.  A method never raises for a
statistical failure: rank problems, non-convergence, empty matchings and the
like are caught and recorded as a failed estimate with a reason tag, so a
simulation replicate always yields one estimate per requested method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bootstrap import BootstrapConfig, bootstrap_percentile_ci
from .data import Dataset
from .errors import (
    DegenerateVarianceError,
    EstimationError,
    ExtremeOrError,
    RankDeficientError,
    SeparationError,
)
from .glm import fit_logistic, fit_ols, hc3_covariance, wald_ci
from .propensity import (
    IptwWeights,
    MatchedSample,
    PropensityScores,
    estimate_ps,
    iptw_weights,
    match_caliper,
    ps_quintile_dummies,
)

ESTIMAND_RD = "risk_difference"
ESTIMAND_LOG_OR = "log_odds_ratio"

#: fixed registry ids used in every CSV/JSON output
RD_METHODS = (
    "crude",
    "cov_adjusted",
    "ps_covariate",
    "matched",
    "iptw",
    "gcomp",
    "gcomp_simple_dr",
    "gcomp_dr_quintiles",
    "aipw",
)
OR_METHODS = (
    "crude",
    "cov_adjusted",
    "ps_covariate",
    "match_unadjusted",
    "match_conditional",
    "iptw",
    "gcomp",
    "gcomp_simple_dr",
    "gcomp_dr_quintiles",
)

#: methods that need propensity scores / a matched sample as inputs
PS_DEPENDENT = {
    ESTIMAND_RD: {
        "ps_covariate",
        "matched",
        "iptw",
        "gcomp_simple_dr",
        "gcomp_dr_quintiles",
        "aipw",
    },
    ESTIMAND_LOG_OR: {
        "ps_covariate",
        "match_unadjusted",
        "match_conditional",
        "iptw",
        "gcomp_simple_dr",
        "gcomp_dr_quintiles",
    },
}
MATCH_DEPENDENT = {
    ESTIMAND_RD: {"matched"},
    ESTIMAND_LOG_OR: {"match_unadjusted", "match_conditional"},
}

#: a back-transformed odds ratio at/above this is recorded as a failure
OR_FAILURE_THRESHOLD = 3000.0
_LOG_OR_FAILURE = math.log(OR_FAILURE_THRESHOLD)


@dataclass(frozen=True)
class EffectEstimate:
    """One method's answer on one dataset."""

    estimand: str
    method: str
    point: float | None
    se: float | None = None
    ci: tuple[float, float] | None = None
    failed: bool = False
    failure_reason: str | None = None

    def __post_init__(self):
        if self.failed:
            if self.point is not None or self.se is not None or self.ci is not None:
                raise ValueError("failed estimates carry no numbers")
            if not self.failure_reason:
                raise ValueError("failed estimates need a reason")
        elif self.point is None:
            raise ValueError("successful estimates need a point value")


@dataclass(frozen=True)
class MatchedCounts:
    b_discordant: int  # treated event, control non-event
    c_discordant: int  # control event, treated non-event
    n_pairs: int


def _failed(estimand: str, method: str, exc: EstimationError) -> EffectEstimate:
    return EffectEstimate(
        estimand, method, None, failed=True, failure_reason=exc.reason
    )


def _intercept_design(*columns: np.ndarray) -> np.ndarray:
    n = len(columns[0])
    return np.column_stack([np.ones(n)] + [np.asarray(c, float) for c in columns])


# ---------------------------------------------------------------------------
# risk-difference family
# ---------------------------------------------------------------------------


def _ols_rd(X: np.ndarray, y: np.ndarray, method: str) -> EffectEstimate:
    """OLS treatment coefficient with an HC3 Wald interval."""
    try:
        fit = fit_ols(X, y)
        cov = hc3_covariance(fit, X)
    except EstimationError as exc:
        return _failed(ESTIMAND_RD, method, exc)
    point = float(fit.coefficients[1])
    se = float(np.sqrt(cov[1, 1]))
    return EffectEstimate(ESTIMAND_RD, method, point, se, wald_ci(point, se))


def crude_rd(data: Dataset) -> EffectEstimate:
    """Linear model of the outcome on treatment alone."""
    X = _intercept_design(data.treatment)
    return _ols_rd(X, data.outcome, "crude")


def covariate_adjusted_rd(data: Dataset) -> EffectEstimate:
    """Linear model of the outcome on treatment and all covariates."""
    X = _intercept_design(data.treatment, *data.covariates.T)
    return _ols_rd(X, data.outcome, "cov_adjusted")


def ps_covariate_rd(data: Dataset, ps: PropensityScores) -> EffectEstimate:
    """Linear model of the outcome on treatment and the propensity score."""
    X = _intercept_design(data.treatment, ps.probabilities)
    return _ols_rd(X, data.outcome, "ps_covariate")


def matched_counts(data: Dataset, matched: MatchedSample) -> MatchedCounts:
    y = data.outcome
    b = sum(1 for t, c in matched.pairs if y[t] == 1.0 and y[c] == 0.0)
    c = sum(1 for t, c_ in matched.pairs if y[t] == 0.0 and y[c_] == 1.0)
    return MatchedCounts(b, c, matched.n_pairs)


def matched_rd(data: Dataset, matched: MatchedSample) -> EffectEstimate:
    """Discordant-pair risk difference with the paired-proportions variance."""
    counts = matched_counts(data, matched)
    b, c, n = counts.b_discordant, counts.c_discordant, counts.n_pairs
    if b + c == 0:
        return _failed(
            ESTIMAND_RD,
            "matched",
            DegenerateVarianceError("no discordant pairs"),
        )
    point = (b - c) / n
    variance = (b + c) / n**2 - (b - c) ** 2 / n**3
    se = math.sqrt(max(variance, 0.0))
    return EffectEstimate(ESTIMAND_RD, "matched", point, se, wald_ci(point, se))


def iptw_rd(data: Dataset, weights: IptwWeights) -> EffectEstimate:
    """Weighted linear model of the outcome on treatment.

    The point estimate is the difference of inverse-probability-weighted arm
    means.  The interval is a Wald interval around a binomial-variance
    heuristic that uses the squared-weight total as the effective sample
    size,

        var = (m1*(1 - m1) + m0*(1 - m0)) / sum(w_i^2),

    which is the (anti-conservative) construction the benchmark tables this
    harness reproduces are built on; its severe undercoverage under
    confounding is part of what the simulation study measures.  Callers who
    want a conventional robust interval instead can combine the weighted fit
    with :func:`smallcausal.glm.weighted_sandwich_covariance`.
    """
    X = _intercept_design(data.treatment)
    w = weights.weights
    try:
        fit = fit_ols(X, data.outcome, weights=w)
        point = float(fit.coefficients[1])
        mu1 = float(fit.coefficients[0] + fit.coefficients[1])
        mu0 = float(fit.coefficients[0])
        var = (mu1 * (1.0 - mu1) + mu0 * (1.0 - mu0)) / float(w @ w)
        if var < 0:
            raise DegenerateVarianceError("negative variance heuristic")
        se = math.sqrt(var)
    except EstimationError as exc:
        return _failed(ESTIMAND_RD, "iptw", exc)
    return EffectEstimate(ESTIMAND_RD, "iptw", point, se, wald_ci(point, se))


def _q_model_design(
    data: Dataset,
    q_spec: str,
    ps: PropensityScores | None,
    treatment: np.ndarray,
    for_fit: bool,
) -> np.ndarray:
    """Design for the outcome (Q) model under actual or counterfactual A."""
    a = np.asarray(treatment, float)
    cols = [a] + list(data.covariates.T)
    if q_spec == "simple_dr":
        # signed inverse-probability covariate, recomputed under the
        # counterfactual treatment when predicting
        eta = ps.logits
        z = np.where(a == 1, 1.0 + np.exp(-eta), -(1.0 + np.exp(eta)))
        cols.append(z)
    elif q_spec == "dr_quintiles":
        cols.extend(ps_quintile_dummies(ps).dummies.T)
    elif q_spec != "plain":
        raise ValueError(f"unknown Q-model spec: {q_spec!r}")
    return _intercept_design(*cols)


def _gcomp_point(data: Dataset, q_spec: str) -> float:
    """Full g-computation pipeline (PS refit included) for one dataset."""
    if q_spec == "plain":
        ps = None
    else:
        if data.n_treated == 0 or data.n_controls == 0:
            raise RankDeficientError("single-arm data: treatment is constant")
        ps = estimate_ps(data)
    X = _q_model_design(data, q_spec, ps, data.treatment, for_fit=True)
    fit = fit_logistic(X, data.outcome)
    ones = np.ones(data.n_subjects)
    X1 = _q_model_design(data, q_spec, ps, ones, for_fit=False)
    X0 = _q_model_design(data, q_spec, ps, np.zeros_like(ones), for_fit=False)
    p1 = expit(X1 @ fit.coefficients)
    p0 = expit(X0 @ fit.coefficients)
    return float(p1.mean() - p0.mean())


def _gcomp_counterfactual_means(
    data: Dataset, q_spec: str, ps: PropensityScores | None
) -> tuple[float, float]:
    """Counterfactual outcome means from a Q-model fitted on the given PS."""
    X = _q_model_design(data, q_spec, ps, data.treatment, for_fit=True)
    fit = fit_logistic(X, data.outcome)
    ones = np.ones(data.n_subjects)
    X1 = _q_model_design(data, q_spec, ps, ones, for_fit=False)
    X0 = _q_model_design(data, q_spec, ps, np.zeros_like(ones), for_fit=False)
    return (
        float(expit(X1 @ fit.coefficients).mean()),
        float(expit(X0 @ fit.coefficients).mean()),
    )


_GCOMP_METHOD_IDS = {
    "plain": "gcomp",
    "simple_dr": "gcomp_simple_dr",
    "dr_quintiles": "gcomp_dr_quintiles",
}


def gcomp_rd(
    data: Dataset,
    q_spec: str = "plain",
    ps: PropensityScores | None = None,
    bootstrap: BootstrapConfig | None = None,
    rng: np.random.Generator | None = None,
) -> EffectEstimate:
    """Outcome-model standardization: predict both potential outcomes for
    every subject and contrast the averages.

    ``q_spec`` selects the Q-model: ``plain`` (treatment + covariates),
    ``simple_dr`` (adds the signed inverse-probability covariate) or
    ``dr_quintiles`` (adds four score-quintile dummies).  The interval, when
    requested, is a percentile bootstrap that refits the whole pipeline
    (propensity model included) inside each resample.
    """
    method = _GCOMP_METHOD_IDS[q_spec]
    if q_spec != "plain" and ps is None:
        raise ValueError(f"{method} requires propensity scores")
    try:
        m1, m0 = _gcomp_counterfactual_means(data, q_spec, ps)
        point = m1 - m0
        ci = None
        if bootstrap is not None:
            if rng is None:
                raise ValueError("bootstrap interval needs a random stream")
            ci = bootstrap_percentile_ci(
                data, lambda d: _gcomp_point(d, q_spec), bootstrap, rng
            )
    except EstimationError as exc:
        return _failed(ESTIMAND_RD, method, exc)
    return EffectEstimate(ESTIMAND_RD, method, point, None, ci)


def aipw_rd(data: Dataset, ps: PropensityScores) -> EffectEstimate:
    """Augmented inverse-probability weighting.

    Arm-specific outcome models of the outcome on the covariates feed the
    augmentation term; the standard error is the empirical SD of the
    per-subject influence contributions over sqrt(n).  An arm model whose
    observed information is numerically singular at the optimum (the
    signature of separation) fails the method.
    """
    try:
        m1, m0 = _aipw_arm_predictions(data)
    except EstimationError as exc:
        return _failed(ESTIMAND_RD, "aipw", exc)
    a = data.treatment
    y = data.outcome
    eta = ps.logits
    w1 = 1.0 + np.exp(-eta)  # 1 / p
    w0 = 1.0 + np.exp(eta)  # 1 / (1 - p)
    term1 = a * y * w1 - (a * w1 - 1.0) * m1
    term0 = (1.0 - a) * y * w0 + (a + (1.0 - a) * (1.0 - w0)) * m0
    phi = term1 - term0
    point = float(phi.mean())
    se = float(phi.std(ddof=1) / math.sqrt(len(phi)))
    return EffectEstimate(ESTIMAND_RD, "aipw", point, se, wald_ci(point, se))


def _aipw_arm_predictions(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Predictions for everyone from outcome models fitted within each arm."""
    out = []
    X_all = _intercept_design(*data.covariates.T)
    for arm in (1.0, 0.0):
        rows = data.treatment == arm
        if not rows.any():
            raise RankDeficientError("empty treatment arm")
        fit = fit_logistic(X_all[rows], data.outcome[rows])
        if fit.covariance is None:
            raise SeparationError(
                "arm outcome model has singular observed information"
            )
        out.append(expit(X_all @ fit.coefficients))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# odds-ratio family
# ---------------------------------------------------------------------------

#: spec-facing aliases accepted by or_estimate, mapped to registry ids
_OR_ALIASES = {
    "covariate_adjusted": "cov_adjusted",
    "gcomp_plain": "gcomp",
}


def _or_point_guard(point: float) -> float:
    """Apply the extreme-OR failure rule to a log-odds-ratio point."""
    if not math.isfinite(point):
        if point > 0:
            raise ExtremeOrError("infinite odds ratio")
        raise DegenerateVarianceError("log odds ratio is not finite")
    if point >= _LOG_OR_FAILURE:
        raise ExtremeOrError(
            f"odds ratio {math.exp(point):.3g} at or above {OR_FAILURE_THRESHOLD:g}"
        )
    return point


def _logistic_or(
    X: np.ndarray,
    y: np.ndarray,
    method: str,
    weights: np.ndarray | None = None,
) -> EffectEstimate:
    fit = fit_logistic(X, y, weights=weights)
    point = _or_point_guard(float(fit.coefficients[1]))
    if fit.covariance is None:
        raise DegenerateVarianceError("singular information at the optimum")
    se = float(np.sqrt(fit.covariance[1, 1]))
    return EffectEstimate(ESTIMAND_LOG_OR, method, point, se, wald_ci(point, se))


def or_estimate(
    data: Dataset,
    method: str,
    ps: PropensityScores | None = None,
    matched: MatchedSample | None = None,
    bootstrap: BootstrapConfig | None = None,
    rng: np.random.Generator | None = None,
) -> EffectEstimate:
    """Log-odds-ratio analogue of each risk-difference method.

    Any method whose back-transformed point estimate reaches an odds ratio of
    3000 is recorded as an ExtremeOR failure before interval construction.
    """
    method = _OR_ALIASES.get(method, method)
    if method not in OR_METHODS:
        raise ValueError(f"unknown odds-ratio method: {method!r}")
    needs_ps = method in PS_DEPENDENT[ESTIMAND_LOG_OR] - MATCH_DEPENDENT[
        ESTIMAND_LOG_OR
    ]
    if needs_ps and ps is None:
        raise ValueError(f"{method} requires propensity scores")
    if method in MATCH_DEPENDENT[ESTIMAND_LOG_OR] and matched is None:
        raise ValueError(f"{method} requires a matched sample")

    try:
        if method == "crude":
            X = _intercept_design(data.treatment)
            return _logistic_or(X, data.outcome, method)
        if method == "cov_adjusted":
            X = _intercept_design(data.treatment, *data.covariates.T)
            return _logistic_or(X, data.outcome, method)
        if method == "ps_covariate":
            X = _intercept_design(data.treatment, ps.probabilities)
            return _logistic_or(X, data.outcome, method)
        if method == "iptw":
            X = _intercept_design(data.treatment)
            w = iptw_weights(ps, data.treatment).weights
            return _logistic_or(X, data.outcome, method, weights=w)
        if method in ("gcomp", "gcomp_simple_dr", "gcomp_dr_quintiles"):
            q_spec = {v: k for k, v in _GCOMP_METHOD_IDS.items()}[method]
            return _gcomp_or(data, q_spec, ps, bootstrap, rng)
        if method == "match_unadjusted":
            rows = np.array([i for pair in matched.pairs for i in pair])
            X = _intercept_design(data.treatment[rows])
            return _logistic_or(X, data.outcome[rows], method)
        if method == "match_conditional":
            return _match_conditional_or(data, matched)
    except EstimationError as exc:
        return _failed(ESTIMAND_LOG_OR, method, exc)
    raise AssertionError("unreachable")


def _gcomp_log_or_point(data: Dataset, q_spec: str) -> float:
    if data.n_treated == 0 or data.n_controls == 0:
        raise RankDeficientError("single-arm data: treatment is constant")
    ps = None if q_spec == "plain" else estimate_ps(data)
    m1, m0 = _gcomp_counterfactual_means(data, q_spec, ps)
    if min(m1, m0) <= 0.0 or max(m1, m0) >= 1.0:
        raise ExtremeOrError("counterfactual mean on the boundary")
    return math.log(m1) - math.log1p(-m1) - math.log(m0) + math.log1p(-m0)


def _gcomp_or(
    data: Dataset,
    q_spec: str,
    ps: PropensityScores | None,
    bootstrap: BootstrapConfig | None,
    rng: np.random.Generator | None,
) -> EffectEstimate:
    method = _GCOMP_METHOD_IDS[q_spec]
    m1, m0 = _gcomp_counterfactual_means(data, q_spec, ps)
    if min(m1, m0) <= 0.0 or max(m1, m0) >= 1.0:
        raise ExtremeOrError("counterfactual mean on the boundary")
    point = _or_point_guard(
        math.log(m1) - math.log1p(-m1) - math.log(m0) + math.log1p(-m0)
    )
    ci = None
    if bootstrap is not None:
        if rng is None:
            raise ValueError("bootstrap interval needs a random stream")
        ci = bootstrap_percentile_ci(
            data, lambda d: _gcomp_log_or_point(d, q_spec), bootstrap, rng
        )
    return EffectEstimate(ESTIMAND_LOG_OR, method, point, None, ci)


def _match_conditional_or(data: Dataset, matched: MatchedSample) -> EffectEstimate:
    """Closed-form 1:1 conditional-likelihood estimate from discordant pairs."""
    counts = matched_counts(data, matched)
    b, c = counts.b_discordant, counts.c_discordant
    if b == 0 or c == 0:
        raise DegenerateVarianceError("a discordant-pair count is zero")
    point = _or_point_guard(math.log(b / c))
    se = math.sqrt(1.0 / b + 1.0 / c)
    return EffectEstimate(
        ESTIMAND_LOG_OR, "match_conditional", point, se, wald_ci(point, se)
    )


# ---------------------------------------------------------------------------
# one-dataset drivers
# ---------------------------------------------------------------------------


def shared_inputs(
    data: Dataset, methods: tuple[str, ...], estimand: str
) -> tuple[PropensityScores | None, EstimationError | None, MatchedSample | None, EstimationError | None]:
    """Fit the propensity model and the matching once for a method set.

    Returns (ps, ps_error, matched, match_error); a propensity failure
    cascades to matching.
    """
    ps = ps_error = matched = match_error = None
    wants_ps = set(methods) & PS_DEPENDENT[estimand]
    if wants_ps:
        try:
            if data.n_treated == 0 or data.n_controls == 0:
                raise RankDeficientError("single-arm data")
            ps = estimate_ps(data)
        except EstimationError as exc:
            ps_error = exc
    if set(methods) & MATCH_DEPENDENT[estimand]:
        if ps is not None:
            try:
                matched = match_caliper(ps, data.treatment)
            except EstimationError as exc:
                match_error = exc
        else:
            match_error = ps_error
    return ps, ps_error, matched, match_error


def estimate_effects(
    data: Dataset,
    methods: tuple[str, ...],
    estimand: str,
    bootstrap: BootstrapConfig | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, EffectEstimate]:
    """Run every requested method on one dataset; one estimate per method."""
    registry = RD_METHODS if estimand == ESTIMAND_RD else OR_METHODS
    unknown = set(methods) - set(registry)
    if unknown:
        raise ValueError(f"unknown methods for {estimand}: {sorted(unknown)}")

    ps, ps_error, matched, match_error = shared_inputs(data, methods, estimand)
    weights = None
    if ps is not None and "iptw" in methods and estimand == ESTIMAND_RD:
        weights = iptw_weights(ps, data.treatment)

    results: dict[str, EffectEstimate] = {}
    for method in methods:
        if method in PS_DEPENDENT[estimand] and ps is None:
            reason = match_error if method in MATCH_DEPENDENT[estimand] else ps_error
            results[method] = _failed(estimand, method, reason)
            continue
        if method in MATCH_DEPENDENT[estimand] and matched is None:
            results[method] = _failed(estimand, method, match_error)
            continue
        if estimand == ESTIMAND_LOG_OR:
            results[method] = or_estimate(
                data, method, ps=ps, matched=matched, bootstrap=bootstrap, rng=rng
            )
            continue
        if method == "crude":
            results[method] = crude_rd(data)
        elif method == "cov_adjusted":
            results[method] = covariate_adjusted_rd(data)
        elif method == "ps_covariate":
            results[method] = ps_covariate_rd(data, ps)
        elif method == "matched":
            results[method] = matched_rd(data, matched)
        elif method == "iptw":
            results[method] = iptw_rd(data, weights)
        elif method == "gcomp":
            results[method] = gcomp_rd(data, "plain", None, bootstrap, rng)
        elif method == "gcomp_simple_dr":
            results[method] = gcomp_rd(data, "simple_dr", ps, bootstrap, rng)
        elif method == "gcomp_dr_quintiles":
            results[method] = gcomp_rd(data, "dr_quintiles", ps, bootstrap, rng)
        elif method == "aipw":
            results[method] = aipw_rd(data, ps)
    return results
