"""Confidence intervals and the end-to-end estimation pipeline.

The pipeline in estimated-score mode is: randomly halve the sample, fit the
propensity model on one half, score the other half, resolve the caliper on
those fitted scores, match, estimate, and attach kernel-based variance
estimates and normal confidence intervals with n equal to the estimation
half. Known-score mode skips the halving and the fit, takes user-supplied
scores and drops the parameter-uncertainty variance term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .data import ObservationTable, split_sample
from .errors import BadAlphaError, CaliperMatchError, PipelineError, TooSmallError
from .estimators import PointEstimates, point_estimates
from .matching import CaliperRule, MatchDiagnostics, build_match_index, caliper_value, match_diagnostics
from .propensity import SCORE_EPS, FitOptions, fit_mle, get_link, predict_fit
from .variance import (
    KernelBandwidths,
    VarianceReport,
    variance_components,
    variance_components_known,
)


@dataclass(frozen=True)
class Interval:
    center: float
    halfwidth: float

    @property
    def lo(self) -> float:
        return self.center - self.halfwidth

    @property
    def hi(self) -> float:
        return self.center + self.halfwidth

    def contains(self, value: float, tol: float = 0.0) -> bool:
        """Containment check; ``tol`` guards zero-width intervals whose center
        matches ``value`` up to float rounding."""
        return self.lo - tol <= value <= self.hi + tol

    def to_dict(self) -> dict:
        return {"center": self.center, "halfwidth": self.halfwidth, "lo": self.lo, "hi": self.hi}


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF."""
    return float(special.ndtri(q))


def confidence_interval(center: float, v_hat: float, n: int, alpha: float) -> Interval:
    """Two-sided symmetric interval center +/- z_{1-alpha/2} sqrt(v_hat/n)."""
    if not 0.0 < alpha < 1.0:
        raise BadAlphaError(f"alpha must be in (0, 1), got {alpha}")
    if n < 1:
        raise TooSmallError("need n >= 1 for a confidence interval")
    if v_hat < 0.0:
        raise ValueError(f"variance must be nonnegative, got {v_hat}")
    z = normal_quantile(1.0 - alpha / 2.0)
    return Interval(center=float(center), halfwidth=z * float(np.sqrt(v_hat / n)))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the pipeline needs besides the data and the seed."""

    mode: str = "estimated"  # "estimated" or "known"
    link: str = "logit"
    caliper: CaliperRule = field(default_factory=CaliperRule.data_dependent)
    delta_override: float | None = None  # explicit numeric caliper, bypasses the rule
    alpha: float = 0.05
    bandwidths: KernelBandwidths = field(default_factory=KernelBandwidths)
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.mode not in ("estimated", "known"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise BadAlphaError(f"alpha must be in (0, 1), got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "link": self.link,
            "caliper": {"kind": self.caliper.kind, "s": self.caliper.s},
            "delta_override": self.delta_override,
            "alpha": self.alpha,
            "bandwidths": self.bandwidths.to_dict(),
        }


@dataclass(frozen=True)
class EstimationReport:
    estimates: PointEstimates
    variance: VarianceReport
    ci_ate: Interval
    ci_att: Interval
    alpha: float
    n_estimation: int
    diagnostics: MatchDiagnostics
    config: dict
    seed: int | None
    caliper: float
    propensity: dict | None = None
    n_clamped_scores: int = 0

    def to_dict(self) -> dict:
        return {
            "schema": "caliper-match/1",
            "config": self.config,
            "seed": self.seed,
            "n_estimation": self.n_estimation,
            "caliper": self.caliper,
            "estimates": self.estimates.to_dict(),
            "variance": self.variance.to_dict(),
            "ci_ate": self.ci_ate.to_dict(),
            "ci_att": self.ci_att.to_dict(),
            "alpha": self.alpha,
            "match_diagnostics": self.diagnostics.to_dict(),
            "propensity": self.propensity,
            "n_clamped_scores": self.n_clamped_scores,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except CaliperMatchError as exc:
        raise PipelineError(name, exc) from exc


def run_pipeline(table: ObservationTable, config: PipelineConfig, seed: int | None = None,
                 known_scores: np.ndarray | None = None) -> EstimationReport:
    """Run the full estimation pipeline and assemble a reproducible report."""
    if config.mode == "known":
        if known_scores is None:
            raise ValueError("known-score mode needs a score vector")
        scores = np.asarray(known_scores, dtype=np.float64)
        if scores.shape[0] != table.n:
            raise ValueError("scores and table have different lengths")
        est_table = table
        fit = None
    else:
        if table.n < 8:
            raise TooSmallError(f"estimated mode needs n >= 8 to split, got {table.n}")
        if seed is None:
            raise ValueError("estimated mode needs a seed for the sample split")
        split = _stage("split", split_sample, table, seed)
        link = get_link(config.link)
        fit = _stage("fit", fit_mle, split.fit_half, link, config.fit_options)
        scores = _stage("predict", predict_fit, fit, split.estimate_half)
        est_table = split.estimate_half

    if config.delta_override is not None:
        delta = float(config.delta_override)
    else:
        delta = _stage("caliper", caliper_value, config.caliper, scores, est_table.d)
    index = _stage("match", build_match_index, scores, est_table.d, delta)
    estimates = _stage("estimate", point_estimates, est_table.y, index)

    if config.mode == "known":
        variance = _stage(
            "variance", variance_components_known,
            scores, est_table.y, est_table.d, estimates, config.bandwidths,
        )
    else:
        variance = _stage(
            "variance", variance_components, est_table, fit, estimates, config.bandwidths,
        )

    n_est = est_table.n
    ci_ate = confidence_interval(estimates.tau_hat, variance.v_total_ate, n_est, config.alpha)
    ci_att = confidence_interval(estimates.tau_t_hat, variance.v_total_att, n_est, config.alpha)

    propensity_summary = None
    if fit is not None:
        propensity_summary = {
            "theta_hat": [float(v) for v in fit.theta_hat],
            "loglik": fit.loglik,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "grad_sup_norm": fit.grad_sup_norm,
            "link": fit.link.name,
        }
    n_clamped = int(np.sum((scores <= SCORE_EPS) | (scores >= 1.0 - SCORE_EPS)))

    return EstimationReport(
        estimates=estimates,
        variance=variance,
        ci_ate=ci_ate,
        ci_att=ci_att,
        alpha=config.alpha,
        n_estimation=n_est,
        diagnostics=match_diagnostics(index),
        config=config.to_dict(),
        seed=seed,
        caliper=delta,
        propensity=propensity_summary,
        n_clamped_scores=n_clamped,
    )
