"""Causal effect estimation for small non-randomized binary-outcome studies.

Nine risk-difference estimators (crude and covariate-adjusted linear models,
propensity-score covariate adjustment, caliper matching, inverse-probability
weighting, three g-computation variants and augmented IPW), their odds-ratio
counterparts, and a reproducible Monte Carlo harness with three benchmark
scenarios, an effect-calibration oracle and metric aggregation.
"""

from .bootstrap import BootstrapConfig, bootstrap_percentile_ci
from .data import Dataset
from .errors import (
    BootstrapCollapseError,
    DegenerateStrataError,
    DegenerateVarianceError,
    EstimationError,
    ExtremeOrError,
    LeverageOneError,
    NoPairsError,
    NotBracketedError,
    NotConvergedError,
    RankDeficientError,
    SeparationError,
)
from .estimators import (
    ESTIMAND_LOG_OR,
    ESTIMAND_RD,
    OR_METHODS,
    RD_METHODS,
    EffectEstimate,
    MatchedCounts,
    aipw_rd,
    covariate_adjusted_rd,
    crude_rd,
    estimate_effects,
    gcomp_rd,
    iptw_rd,
    matched_counts,
    matched_rd,
    or_estimate,
    ps_covariate_rd,
)
from .glm import (
    LinearFit,
    LogisticFit,
    fit_logistic,
    fit_ols,
    hc3_covariance,
    wald_ci,
    weighted_sandwich_covariance,
)
from .propensity import (
    IptwWeights,
    MatchedSample,
    PropensityScores,
    QuintileDummies,
    estimate_ps,
    iptw_weights,
    match_caliper,
    ps_quintile_dummies,
)
from .simulation import (
    CounterfactualTruth,
    MethodMetrics,
    MetricsSummary,
    ReplicateResult,
    ScenarioSpec,
    calibrate_beta_trt,
    generate,
    generate_scenario1,
    generate_scenario2,
    generate_scenario3,
    make_scenario,
    run_replicate,
    run_study,
    summarize,
    true_marginal_effect,
    true_marginal_rd,
)
from .streams import derive_substream

__version__ = "0.1.0"
