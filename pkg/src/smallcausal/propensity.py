"""Propensity scores and the three conditioning devices built from them:
matched pairs, inverse-probability weights, and quintile strata."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import DegenerateStrataError, NoPairsError
from .glm import LogisticFit, fit_logistic

DEFAULT_CALIPER_SD = 0.2


@dataclass(frozen=True)
class PropensityScores:
    """Estimated treatment probabilities and their logits.

    Logits are the linear predictor of the fitted model and are the
    numerically safe representation; probabilities may saturate to 0/1 in
    floating point when a fit sits on the boundary.
    """

    probabilities: np.ndarray
    logits: np.ndarray
    source_fit: LogisticFit


@dataclass(frozen=True)
class MatchedSample:
    pairs: tuple[tuple[int, int], ...]  # (treated_index, control_index)
    caliper_width: float  # on the logit scale
    n_pairs: int


@dataclass(frozen=True)
class IptwWeights:
    weights: np.ndarray  # 1/p for treated, 1/(1-p) for controls; all > 1


@dataclass(frozen=True)
class QuintileDummies:
    dummies: np.ndarray  # (n, 4); lowest stratum is the omitted reference
    cutpoints: np.ndarray  # 20/40/60/80 percentiles of the logits


def estimate_ps(data: Dataset) -> PropensityScores:
    """Main-effects logistic model of treatment on all measured covariates.

    Categorical covariates are expected to arrive dummy-coded in the
    dataset.  NotConverged and RankDeficient propagate to the caller, which
    records a failure for every score-based method in that replicate.
    """
    if data.n_treated == 0 or data.n_controls == 0:
        raise ValueError("propensity model needs at least one subject per arm")
    X = np.column_stack([np.ones(data.n_subjects), data.covariates])
    fit = fit_logistic(X, data.treatment)
    logits = X @ fit.coefficients
    return PropensityScores(expit(logits), logits, fit)


def match_caliper(
    ps: PropensityScores,
    treatment: np.ndarray,
    caliper_sd_multiplier: float = DEFAULT_CALIPER_SD,
) -> MatchedSample:
    """Greedy 1:1 nearest-neighbor matching without replacement on the logit.

    Treated subjects are processed in descending propensity order (ties by
    original index); each takes the unused control with the smallest absolute
    logit distance, skipping when the nearest exceeds the caliper.  Distance
    ties go to the lower control index.  The caliper is
    ``caliper_sd_multiplier`` times the sample SD (denominator n-1) of all n
    logits.
    """
    treatment = np.asarray(treatment)
    treated_idx = np.flatnonzero(treatment == 1)
    control_idx = np.flatnonzero(treatment == 0)
    if treated_idx.size == 0 or control_idx.size == 0:
        raise NoPairsError("matching needs at least one subject per arm")

    logits = ps.logits
    caliper = caliper_sd_multiplier * float(np.std(logits, ddof=1))

    order = treated_idx[
        np.argsort(-ps.probabilities[treated_idx], kind="stable")
    ]
    control_logits = logits[control_idx].astype(float)
    available = np.ones(control_idx.size, dtype=bool)

    pairs: list[tuple[int, int]] = []
    for t in order:
        if not available.any():
            break
        dist = np.abs(control_logits - logits[t])
        dist[~available] = np.inf
        j = int(np.argmin(dist))  # first minimum = lowest control index
        if dist[j] <= caliper:
            pairs.append((int(t), int(control_idx[j])))
            available[j] = False

    if not pairs:
        raise NoPairsError("no control within the caliper for any treated subject")
    return MatchedSample(tuple(pairs), caliper, len(pairs))


def iptw_weights(ps: PropensityScores, treatment: np.ndarray) -> IptwWeights:
    """1/p for treated and 1/(1-p) for controls, with no trimming.

    Computed from the logits, so near-boundary scores give large finite
    weights instead of overflowing; extreme weights are allowed by design.
    """
    treatment = np.asarray(treatment)
    eta = ps.logits
    w = np.where(treatment == 1, 1.0 + np.exp(-eta), 1.0 + np.exp(eta))
    return IptwWeights(w)


def ps_quintile_dummies(ps: PropensityScores) -> QuintileDummies:
    """Four dummies for the upper quintile strata of the logit score.

    Cutpoints are the 20/40/60/80 sample percentiles (linear interpolation
    between order statistics); membership is left-closed (value <= cutpoint
    falls in the lower stratum); the lowest stratum is the omitted reference.
    """
    logits = ps.logits
    if logits.size < 5:
        raise DegenerateStrataError("need at least 5 subjects for quintiles")
    if np.unique(logits).size < 5:
        raise DegenerateStrataError("fewer than 5 distinct logit values")
    cutpoints = np.quantile(logits, [0.2, 0.4, 0.6, 0.8])
    stratum = (logits[:, None] > cutpoints[None, :]).sum(axis=1)  # 0..4
    dummies = (stratum[:, None] == np.arange(1, 5)[None, :]).astype(float)
    return QuintileDummies(dummies, cutpoints)
