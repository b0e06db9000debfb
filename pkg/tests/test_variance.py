import numpy as np
import pytest

import calipermatch as cm
from calipermatch.errors import DegenerateWindowError, DensityFloorError
from calipermatch.variance import KernelMomentEstimator


def build_estimator(n=1500, seed=2, constant=None, with_theta=True):
    dgp = cm.default_dgp()
    table, _ = cm.draw_sample(dgp, n, seed)
    fit = cm.fit_mle(table, cm.LOGIT)
    design = table.design_matrix()
    t = design @ fit.theta_hat
    scores = cm.LOGIT.g(t)
    y = np.full(n, constant) if constant is not None else table.y
    bw = cm.KernelBandwidths()
    kwargs = {}
    if with_theta:
        kwargs = dict(index_values=t, design=design,
                      gamma_index=bw.gamma_index(n, t),
                      link=cm.LOGIT, theta=fit.theta_hat)
    est = KernelMomentEstimator(y, table.d, scores, bw.gamma(n), **kwargs)
    return est, table, fit, scores, t


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        cm.KernelBandwidths(alpha=0.3, beta=0.2)
    with pytest.raises(ValueError):
        cm.KernelBandwidths(alpha=0.2, beta=0.26)
    bw = cm.KernelBandwidths()
    n = 10000
    assert bw.gamma(n) == pytest.approx(n ** (-1 / 4.25))
    assert bw.a(n) == pytest.approx(0.1 * n ** (-1 / 4.5))
    # beta > alpha makes the bandwidth shrink faster than the trim
    ratio = [bw.gamma(m) / bw.a(m) for m in (10**3, 10**5, 10**7)]
    assert ratio[0] > ratio[1] > ratio[2]


def test_truncation_window():
    scores = np.linspace(0.2, 0.8, 61)
    win = cm.truncation_window(scores, 0.05)
    assert win.lo == pytest.approx(0.25)
    assert win.hi == pytest.approx(0.75)
    assert win.n_hat == int(np.sum((scores >= win.lo) & (scores <= win.hi)))
    with pytest.raises(DegenerateWindowError):
        cm.truncation_window(scores, 0.31)


def test_constant_outcome_identities():
    est, *_ = build_estimator(constant=3.0, with_theta=False)
    pts = np.linspace(0.35, 0.65, 9)
    for dval in (0, 1):
        mu, mu2, sigma2, dmu_dp, h, _ = est.moments(dval, pts)
        assert np.allclose(mu, 3.0, atol=1e-12)
        assert np.all(sigma2 <= 1e-12)
        assert np.allclose(dmu_dp, 0.0, atol=1e-10)


def test_constant_outcome_lambda_zero():
    est, table, *_ = build_estimator(constant=2.0)
    rows = table.x[:4]
    for dval in (0, 1):
        lam = est.lambda_rows(dval, rows)
        assert np.allclose(lam, 0.0, atol=1e-9)


def test_single_unit_ratio():
    est = KernelMomentEstimator(
        y=np.array([3.0, 5.0]), d=np.array([0, 1]),
        score_values=np.array([0.4, 0.7]), gamma_score=0.05)
    mu, mu2, sigma2, _, _, _ = est.moments(0, np.array([0.4]))
    assert mu[0] == pytest.approx(3.0, abs=1e-12)
    assert sigma2[0] == 0.0


def test_density_floor_raised():
    est = KernelMomentEstimator(
        y=np.array([3.0, 5.0]), d=np.array([0, 1]),
        score_values=np.array([0.4, 0.7]), gamma_score=0.01)
    with pytest.raises(DensityFloorError) as err:
        est.moments(0, np.array([0.99]))
    assert err.value.unit_indices == [0]


def test_dmu_dp_is_exact_derivative():
    # the score-space derivative sums are the literal calculus derivative of
    # the ratio estimator, so a central difference must reproduce them
    est, *_ = build_estimator(n=2000, seed=7, with_theta=False)
    eps = 1e-6
    for dval in (0, 1):
        for p0 in (0.4, 0.5, 0.6):
            dmu = est.moments(dval, np.array([p0]))[3][0]
            hi = est.mu(dval, np.array([p0 + eps]))[0]
            lo = est.mu(dval, np.array([p0 - eps]))[0]
            assert dmu == pytest.approx((hi - lo) / (2 * eps), rel=1e-6, abs=1e-8)


def _population_lambda_rows(theta, x_rows, dval, eps=1e-6, nodes=120):
    """Central differences of the population map theta -> mu^d(theta, g(theta'x))
    for the heterogeneous default model, by weighted quadrature over the
    box section of theta (truth oracle, independent of the kernel code)."""
    from numpy.polynomial.legendre import leggauss

    u_gl, w_gl = leggauss(nodes)
    g = cm.LOGIT.g

    def mu(theta_val, t):
        th1, th2 = theta_val
        a = (t - th2 * 0.0) / th1
        b = (t - th2 * 1.0) / th1
        lo = np.maximum(np.minimum(a, b), 0.0)
        hi = np.minimum(np.maximum(a, b), 1.0)
        x1 = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * u_gl[None, :]
        x2 = (t[:, None] - th1 * x1) / th2
        wd = g(x1 - x2) if dval == 1 else 1.0 - g(x1 - x2)
        m = (2 * x1 + x2) if dval == 1 else (x1 + x2)
        return np.sum(w_gl * wd * m, axis=1) / np.sum(w_gl * wd, axis=1)

    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        cols.append((mu(theta + e, x_rows @ (theta + e))
                     - mu(theta - e, x_rows @ (theta - e))) / (2 * eps))
    return np.column_stack(cols)


def test_q_hat_window_average_consistency():
    # the parameter-gradient rows are noisy pointwise; what enters the
    # variance is their window average, which should sit near the population
    # average of the true gradient over the same window
    n = 20000
    dgp = cm.default_dgp(effect="heterogeneous")
    table, _ = cm.draw_sample(dgp, n, 5)
    fit = cm.fit_mle(table, cm.LOGIT)
    scores = cm.predict_fit(fit, table)
    delta = cm.caliper_value(cm.CaliperRule.data_dependent(), scores, table.d)
    pe = cm.point_estimates(table.y, cm.build_match_index(scores, table.d, delta))
    report = cm.variance_components(table, fit, pe, cm.KernelBandwidths())

    win = cm.truncation_window(cm.LOGIT.g(table.x @ fit.theta_hat),
                               cm.KernelBandwidths().a(n))
    rng = np.random.default_rng(0)
    rows = table.x[win.in_window]
    rows = rows[rng.choice(rows.shape[0], 2000, replace=False)]
    for dval, q_hat in ((0, report.q_hat_0), (1, report.q_hat_1)):
        truth = _population_lambda_rows(fit.theta_hat, rows, dval).mean(axis=0)
        assert np.all(np.abs(q_hat - truth) <= 0.08)


def test_lambda_rejects_bad_row():
    est, *_ = build_estimator()
    with pytest.raises(ValueError):
        est.lambda_rows(0, np.ones((1, 5)))


def test_variance_components_zero_noise_constant_effect():
    silent = cm.NoiseSpec(halfwidth=0.0)
    dgp = cm.AdmissibleDgp(
        theta0=(1.0, -1.0),
        m0=cm.RegressionSpec(kind="linear", intercept=0.5, linear=(0.0, 0.0)),
        m1=cm.RegressionSpec(kind="linear", intercept=1.5, linear=(0.0, 0.0)),
        noise0=silent, noise1=silent,
    )
    table, scores = cm.draw_sample(dgp, 4000, 3)
    fit = cm.fit_mle(table, cm.LOGIT)
    delta = cm.caliper_value(cm.CaliperRule.data_dependent(),
                             cm.predict_fit(fit, table), table.d)
    index = cm.build_match_index(cm.predict_fit(fit, table), table.d, delta)
    est = cm.point_estimates(table.y, index)
    assert est.tau_hat == pytest.approx(1.0, abs=1e-12)
    report = cm.variance_components(table, fit, est, cm.KernelBandwidths())
    assert report.v_tau <= 1e-8
    assert report.v_sigma_pi <= 1e-8
    assert report.theta_term <= 1e-8
    assert report.v_total_ate <= 3e-8


def test_variance_components_degenerate_window():
    est, table, fit, *_ = build_estimator(n=500, seed=4)
    pe = cm.point_estimates(table.y, cm.build_match_index(
        cm.predict_fit(fit, table), table.d, 0.1))
    bw = cm.KernelBandwidths(kappa1=10.0)  # trim wider than the score range
    with pytest.raises(DegenerateWindowError):
        cm.variance_components(table, fit, pe, bw)


def test_variance_report_reorder_invariance():
    dgp = cm.default_dgp()
    table, _ = cm.draw_sample(dgp, 1200, 9)
    fit = cm.fit_mle(table, cm.LOGIT)
    scores = cm.predict_fit(fit, table)
    delta = cm.caliper_value(cm.CaliperRule.data_dependent(), scores, table.d)
    pe = cm.point_estimates(table.y, cm.build_match_index(scores, table.d, delta))
    base = cm.variance_components(table, fit, pe, cm.KernelBandwidths())

    rng = np.random.default_rng(1)
    perm = rng.permutation(table.n)
    table_p = table.subset(perm)
    scores_p = cm.predict_fit(fit, table_p)
    pe_p = cm.point_estimates(table_p.y, cm.build_match_index(scores_p, table_p.d, delta))
    out = cm.variance_components(table_p, fit, pe_p, cm.KernelBandwidths())
    for name in ("v_tau", "v_sigma_pi", "theta_term", "v_tau_t",
                 "v_t_sigma_pi", "theta_term_t", "v_total_ate", "v_total_att"):
        assert getattr(out, name) == pytest.approx(getattr(base, name), abs=1e-12)


def test_theta_term_nonnegative_random():
    rng = np.random.default_rng(6)
    dgp = cm.default_dgp(effect="heterogeneous")
    for seed in range(4):
        n = int(rng.integers(300, 900))
        table, _ = cm.draw_sample(dgp, n, seed + 50)
        fit = cm.fit_mle(table, cm.LOGIT)
        scores = cm.predict_fit(fit, table)
        delta = cm.caliper_value(cm.CaliperRule.data_dependent(), scores, table.d)
        pe = cm.point_estimates(table.y, cm.build_match_index(scores, table.d, delta))
        report = cm.variance_components(table, fit, pe, cm.KernelBandwidths())
        assert report.theta_term >= 0.0
        assert report.theta_term_t >= 0.0
        assert report.v_total_ate >= 0.0
        assert report.v_total_att >= 0.0


def test_known_mode_components():
    dgp = cm.default_dgp()
    table, scores = cm.draw_sample(dgp, 1500, 12)
    delta = cm.caliper_value(cm.CaliperRule.data_dependent(), scores, table.d)
    pe = cm.point_estimates(table.y, cm.build_match_index(scores, table.d, delta))
    report = cm.variance_components_known(scores, table.y, table.d, pe, cm.KernelBandwidths())
    assert report.theta_term == 0.0
    assert report.theta_term_t == 0.0
    assert report.v_total_ate == report.v_tau + report.v_sigma_pi
    assert report.q_hat_1 is None
