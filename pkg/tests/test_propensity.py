import numpy as np
import pytest

import calipermatch as cm
from calipermatch.errors import (
    DimensionMismatchError,
    RankDeficientError,
    SeparationError,
    SingularInformationError,
)
from calipermatch.propensity import log_likelihood_parts


def symmetric_four():
    return cm.ObservationTable(
        y=np.zeros(4), d=np.array([1, 0, 1, 0]),
        x=np.array([[-1.0], [-1.0], [1.0], [1.0]]),
    )


def test_link_values_at_zero():
    assert cm.link_eval(cm.LOGIT, 0.0) == (0.5, 0.25, 0.0)
    g, gp, gpp = cm.link_eval(cm.PROBIT, 0.0)
    assert g == 0.5
    assert gp == pytest.approx(0.3989422804014327, abs=1e-16)
    assert gpp == 0.0


def test_logit_at_log3():
    assert cm.LOGIT.g(np.log(3.0)) == pytest.approx(0.75, abs=1e-15)


def test_link_contract_on_grid():
    t = np.linspace(-6, 6, 61)
    for link, sup in ((cm.LOGIT, 0.25), (cm.PROBIT, 1 / np.sqrt(2 * np.pi))):
        g = link.g(t)
        gp = link.gprime(t)
        assert np.all((g > 0) & (g < 1))
        assert np.all(np.diff(g) > 0)
        assert np.all(gp > 0) and gp.max() <= sup + 1e-15
    # inverse round trip and the derivative identity away from the extreme
    # tails, where float64 resolution of p near 1 caps the accuracy
    t = np.linspace(-4, 4, 41)
    for link in (cm.LOGIT, cm.PROBIT):
        g = link.g(t)
        gp = link.gprime(t)
        assert np.allclose(link.inverse(g), t, atol=1e-11)
        assert np.allclose(link.inverse_prime(g), 1.0 / gp, rtol=1e-11)


def test_probit_quantile_reference_values():
    inv = cm.PROBIT.inverse
    assert inv(0.5) == 0.0
    assert float(inv(0.975)) == pytest.approx(1.959963984540054, abs=1e-13)
    assert float(inv(0.9986501019683699)) == pytest.approx(3.0, abs=1e-13)
    assert float(inv(1e-10)) == pytest.approx(-6.361340902404056, abs=1e-12)


def test_probit_cdf_accuracy():
    from scipy.stats import norm

    t = np.array([-8.0, -3.2, -0.7, 0.0, 1.1, 4.5])
    assert np.max(np.abs(cm.PROBIT.g(t) - norm.cdf(t))) <= 1e-15


def test_score_and_hessian_match_finite_differences():
    rng = np.random.default_rng(12)
    for link in (cm.LOGIT, cm.PROBIT):
        for _ in range(10):
            n, k = 30, 3
            design = rng.standard_normal((n, k))
            d = (rng.random(n) < 0.5).astype(float)
            theta = rng.standard_normal(k) * 0.5
            ll, score, hess = log_likelihood_parts(design, d, link, theta)
            eps = 1e-6
            for j in range(k):
                e = np.zeros(k)
                e[j] = eps
                lp = log_likelihood_parts(design, d, link, theta + e)
                lm = log_likelihood_parts(design, d, link, theta - e)
                fd_score = (lp[0] - lm[0]) / (2 * eps)
                assert score[j] == pytest.approx(fd_score, rel=1e-6, abs=1e-7)
                fd_hess = (lp[1] - lm[1]) / (2 * eps)
                assert np.allclose(hess[:, j], fd_hess, rtol=1e-6, atol=1e-5)


def test_symmetric_four_point_fit():
    fit = cm.fit_mle(symmetric_four(), cm.LOGIT)
    assert abs(fit.theta_hat[0]) <= 1e-10
    assert fit.loglik == pytest.approx(4 * np.log(0.5), abs=1e-12)
    assert fit.vtheta_hat[0, 0] == pytest.approx(4.0, abs=1e-10)
    assert fit.converged and fit.grad_sup_norm <= 1e-10


def test_vtheta_identity_design():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 2))
    table = cm.ObservationTable(y=np.zeros(40), d=np.tile([0, 1], 20), x=x)
    v = cm.vtheta_hat(table, cm.LOGIT, np.zeros(2))
    gram = x.T @ x / 40
    assert np.allclose(v, 4.0 * np.linalg.inv(gram), rtol=1e-12)


def test_vtheta_singular_when_saturated():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    table = cm.ObservationTable(y=np.zeros(4), d=np.array([0, 1, 0, 1]), x=x)
    with pytest.raises(SingularInformationError):
        cm.vtheta_hat(table, cm.LOGIT, np.array([800.0]))


def test_separation_detected():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    table = cm.ObservationTable(y=np.zeros(4), d=np.array([0, 0, 1, 1]), x=x)
    with pytest.raises(SeparationError):
        cm.fit_mle(table, cm.LOGIT)


def test_rank_deficient_design():
    rng = np.random.default_rng(8)
    x1 = rng.standard_normal(20)
    x = np.column_stack([x1, 2.0 * x1])
    table = cm.ObservationTable(y=np.zeros(20), d=np.tile([0, 1], 10), x=x)
    with pytest.raises(RankDeficientError):
        cm.fit_mle(table, cm.LOGIT)


def test_logit_moment_equation_and_row_order_invariance():
    rng = np.random.default_rng(21)
    n = 400
    x = rng.standard_normal((n, 3))
    truth = np.array([0.5, -1.0, 0.25])
    d = (rng.random(n) < cm.LOGIT.g(x @ truth)).astype(int)
    table = cm.ObservationTable(y=np.zeros(n), d=d, x=x)
    fit = cm.fit_mle(table, cm.LOGIT)
    resid = d - cm.LOGIT.g(x @ fit.theta_hat)
    assert np.max(np.abs(x.T @ resid)) <= 1e-10

    perm = rng.permutation(n)
    fit2 = cm.fit_mle(table.subset(perm), cm.LOGIT)
    assert np.max(np.abs(fit.theta_hat - fit2.theta_hat)) <= 1e-12


def test_probit_fit_recovers_truth_roughly():
    rng = np.random.default_rng(22)
    n = 4000
    x = rng.standard_normal((n, 2))
    truth = np.array([0.8, -0.4])
    d = (rng.random(n) < cm.PROBIT.g(x @ truth)).astype(int)
    table = cm.ObservationTable(y=np.zeros(n), d=d, x=x)
    fit = cm.fit_mle(table, cm.PROBIT)
    assert np.all(np.abs(fit.theta_hat - truth) < 0.15)
    assert fit.grad_sup_norm <= 1e-10


def test_predict():
    assert np.all(cm.predict(np.zeros(2), cm.LOGIT, np.ones((3, 2))) == 0.5)
    score = cm.predict(np.array([1.0, -1.0]), cm.LOGIT,
                       np.array([[np.log(3.0) + 1.0, 1.0]]))
    assert score[0] == pytest.approx(0.75, abs=1e-12)
    with pytest.raises(DimensionMismatchError):
        cm.predict(np.zeros(2), cm.LOGIT, np.ones((3, 3)))


def test_predict_clamps():
    score = cm.predict(np.array([1000.0]), cm.LOGIT, np.array([[1.0], [-1.0]]))
    assert score[0] == 1.0 - 1e-12
    assert score[1] == 1e-12


def test_intercept_column_appended():
    rng = np.random.default_rng(31)
    n = 600
    x = rng.standard_normal((n, 2))
    truth = np.array([1.0, -0.5, 0.3])  # last entry is the intercept
    d = (rng.random(n) < cm.LOGIT.g(np.c_[x, np.ones(n)] @ truth)).astype(int)
    table = cm.ObservationTable(y=np.zeros(n), d=d, x=x, has_intercept=True)
    fit = cm.fit_mle(table, cm.LOGIT)
    assert fit.theta_hat.shape == (3,)
    scores = cm.predict_fit(fit, table)
    assert np.all((scores > 0) & (scores < 1))
