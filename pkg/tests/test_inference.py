import numpy as np
import pytest

import calipermatch as cm
from calipermatch.errors import BadAlphaError, PipelineError, TooSmallError


def test_confidence_interval_reference():
    ci = cm.confidence_interval(1.0, 4.0, 400, 0.05)
    assert ci.halfwidth == pytest.approx(0.1959964, abs=1e-6)
    assert ci.lo == pytest.approx(0.80400, abs=1e-5)
    assert ci.hi == pytest.approx(1.19600, abs=1e-5)


def test_confidence_interval_degenerate():
    ci = cm.confidence_interval(2.5, 0.0, 100, 0.05)
    assert ci.lo == ci.hi == 2.5


def test_confidence_interval_bad_alpha():
    for alpha in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(BadAlphaError):
            cm.confidence_interval(0.0, 1.0, 10, alpha)


def test_ci_width_scales_with_sqrt_n():
    w100 = cm.confidence_interval(0.0, 2.0, 100, 0.05).halfwidth
    w400 = cm.confidence_interval(0.0, 2.0, 400, 0.05).halfwidth
    assert w100 == pytest.approx(2.0 * w400, rel=1e-12)


def test_normal_quantile_accuracy():
    assert cm.inference.normal_quantile(0.975) == pytest.approx(
        1.959963984540054, abs=1e-9)
    assert cm.inference.normal_quantile(0.5) == 0.0


def test_known_mode_toy_pipeline(toy6):
    table = cm.ObservationTable(y=toy6["y"], d=toy6["d"],
                                x=np.zeros((6, 2)))
    config = cm.PipelineConfig(mode="known", delta_override=0.05)
    report = cm.run_pipeline(table, config, known_scores=toy6["scores"])
    assert report.estimates.tau_hat == pytest.approx(7 / 6, abs=1e-12)
    assert report.estimates.tau_t_hat == pytest.approx(7 / 6, abs=1e-12)
    assert report.variance.theta_term == 0.0
    assert report.caliper == 0.05


def test_estimated_mode_too_small():
    table = cm.ObservationTable(y=np.zeros(6), d=np.array([0, 1] * 3),
                                x=np.random.default_rng(0).random((6, 2)))
    with pytest.raises(TooSmallError):
        cm.run_pipeline(table, cm.PipelineConfig(mode="estimated"), seed=1)


def test_pipeline_stage_labels():
    rng = np.random.default_rng(1)
    # one treated unit: the split can never place it in both halves
    table = cm.ObservationTable(
        y=rng.standard_normal(12), d=np.r_[1, np.zeros(11, dtype=int)],
        x=rng.random((12, 2)))
    with pytest.raises(PipelineError) as err:
        cm.run_pipeline(table, cm.PipelineConfig(mode="estimated"), seed=3)
    assert err.value.stage == "split"
    assert "split" in str(err.value)


def test_pipeline_deterministic_json():
    dgp = cm.default_dgp()
    table, _ = cm.draw_sample(dgp, 40, 2)
    config = cm.PipelineConfig(mode="estimated")
    a = cm.run_pipeline(table, config, seed=9).to_json()
    b = cm.run_pipeline(table, config, seed=9).to_json()
    assert a == b
    c = cm.run_pipeline(table, config, seed=10).to_json()
    assert a != c


def test_pipeline_report_roundtrip():
    import json

    dgp = cm.default_dgp()
    table, scores = cm.draw_sample(dgp, 200, 3)
    report = cm.run_pipeline(table, cm.PipelineConfig(mode="known"),
                             known_scores=scores)
    payload = report.to_dict()
    assert json.loads(report.to_json()) == json.loads(json.dumps(payload))
    assert payload["schema"] == "caliper-match/1"


def test_known_mode_uses_full_sample():
    dgp = cm.default_dgp()
    table, scores = cm.draw_sample(dgp, 300, 4)
    report = cm.run_pipeline(table, cm.PipelineConfig(mode="known"),
                             known_scores=scores)
    assert report.n_estimation == 300
    est = cm.run_pipeline(table, cm.PipelineConfig(mode="estimated"), seed=5)
    assert est.n_estimation == 150
    assert est.propensity is not None
    assert report.propensity is None


def test_probit_pipeline_end_to_end():
    dgp = cm.AdmissibleDgp(
        theta0=(1.0, -1.0),
        m0=cm.RegressionSpec(kind="linear", intercept=0.0, linear=(1.0, 1.0)),
        m1=cm.RegressionSpec(kind="linear", intercept=1.0, linear=(1.0, 1.0)),
        link=cm.PROBIT,
    )
    table, _ = cm.draw_sample(dgp, 3000, 6)
    report = cm.run_pipeline(table, cm.PipelineConfig(mode="estimated", link="probit"),
                             seed=4)
    assert report.propensity["link"] == "probit"
    assert report.ci_ate.contains(1.0, tol=report.ci_ate.halfwidth)  # sane scale
    assert 0.7 < report.estimates.tau_hat < 1.3
    assert report.variance.v_total_ate > 0
