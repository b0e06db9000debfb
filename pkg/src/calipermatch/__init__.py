"""Caliper matching estimators of average treatment effects on propensity
scores, with kernel-based asymptotic variance estimates, confidence
intervals, and a simulation laboratory."""

from .data import ObservationTable, SplitSample, ingest_csv, split_sample, write_csv
from .dgp import (
    AdmissibleDgp,
    NoiseSpec,
    OracleEffects,
    RegressionSpec,
    brute_force_match_oracle,
    coverage_experiment,
    default_dgp,
    draw_sample,
    matches_growth_experiment,
    single_index_dgp,
    true_effects,
)
from .estimators import PointEstimates, ate_hat, att_hat, point_estimates
from .inference import (
    EstimationReport,
    Interval,
    PipelineConfig,
    confidence_interval,
    run_pipeline,
)
from .matching import (
    CaliperRule,
    MatchIndex,
    build_match_index,
    caliper_value,
    largest_closest_distance,
    match_diagnostics,
)
from .propensity import (
    LOGIT,
    PROBIT,
    FitOptions,
    Link,
    PropensityFit,
    fit_mle,
    get_link,
    link_eval,
    predict,
    predict_fit,
    vtheta_hat,
)
from .variance import (
    KernelBandwidths,
    TruncationWindow,
    VarianceReport,
    gaussian_kernel,
    truncation_window,
    variance_components,
    variance_components_known,
)

__version__ = "0.1.0"
