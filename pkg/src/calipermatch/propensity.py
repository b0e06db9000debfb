"""Single-index propensity models g(theta'x), their maximum-likelihood fit,
and the inverse-information estimator of the parameter variance.

Only the logit and probit links are provided. Each link exposes the scalar
maps needed downstream as a closed contract: g, its first two derivatives,
the inverse g^{-1} and the derivative of the inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import ObservationTable
from .errors import (
    DimensionMismatchError,
    NoConvergenceError,
    RankDeficientError,
    SeparationError,
    SingularInformationError,
)

SCORE_EPS = 1e-12
_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


class Link:
    """Scalar link contract: strictly increasing, twice differentiable,
    bounded derivative."""

    name = "abstract"

    def g(self, t):
        raise NotImplementedError

    def gprime(self, t):
        raise NotImplementedError

    def gsecond(self, t):
        raise NotImplementedError

    def inverse(self, p):
        raise NotImplementedError

    def inverse_prime(self, p):
        """(g^{-1})'(p) = 1 / g'(g^{-1}(p))."""
        return 1.0 / self.gprime(self.inverse(p))

    def log_g(self, t):
        return np.log(np.clip(self.g(t), SCORE_EPS, None))

    def log_one_minus_g(self, t):
        return np.log(np.clip(1.0 - self.g(t), SCORE_EPS, None))

    def __repr__(self):
        return f"<Link {self.name}>"


class LogitLink(Link):
    name = "logit"

    def g(self, t):
        return special.expit(t)

    def gprime(self, t):
        # g(1-g), computed as expit(t)*expit(-t) to stay accurate in the tails
        return special.expit(t) * special.expit(-np.asarray(t, dtype=np.float64))

    def gsecond(self, t):
        g = special.expit(t)
        return self.gprime(t) * (1.0 - 2.0 * g)

    def inverse(self, p):
        return special.logit(p)

    def inverse_prime(self, p):
        p = np.asarray(p, dtype=np.float64)
        return 1.0 / (p * (1.0 - p))

    def log_g(self, t):
        return special.log_expit(t)

    def log_one_minus_g(self, t):
        return special.log_expit(-np.asarray(t, dtype=np.float64))


class ProbitLink(Link):
    name = "probit"

    def g(self, t):
        return special.ndtr(t)

    def gprime(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.exp(-0.5 * t * t) / _SQRT_2PI

    def gsecond(self, t):
        t = np.asarray(t, dtype=np.float64)
        return -t * self.gprime(t)

    def inverse(self, p):
        return special.ndtri(p)

    def log_g(self, t):
        return special.log_ndtr(t)

    def log_one_minus_g(self, t):
        return special.log_ndtr(-np.asarray(t, dtype=np.float64))


LOGIT = LogitLink()
PROBIT = ProbitLink()
_LINKS = {"logit": LOGIT, "probit": PROBIT}


def get_link(name: str) -> Link:
    try:
        return _LINKS[name]
    except KeyError:
        raise ValueError(f"unknown link {name!r}; expected one of {sorted(_LINKS)}")


def link_eval(link: Link, t):
    """Return (g, g', g'') at t."""
    return link.g(t), link.gprime(t), link.gsecond(t)


@dataclass(frozen=True)
class PropensityFit:
    """A fitted single-index model: parameter, its variance estimate and
    convergence diagnostics."""

    theta_hat: np.ndarray
    vtheta_hat: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    grad_sup_norm: float
    link: Link


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-10
    max_iter: int = 100
    max_halvings: int = 30
    theta_norm_guard: float = 1e3


def log_likelihood_parts(design: np.ndarray, d: np.ndarray, link: Link, theta: np.ndarray):
    """Log-likelihood, score vector and observed Hessian at theta.

    The per-unit contribution is d*log g(u) + (1-d)*log(1-g(u)) with
    u = theta'x; score and Hessian follow by the chain rule.
    """
    u = design @ theta
    dd = np.asarray(d, dtype=np.float64)
    ll = float(np.sum(dd * link.log_g(u) + (1.0 - dd) * link.log_one_minus_g(u)))
    g = np.clip(link.g(u), SCORE_EPS, 1.0 - SCORE_EPS)
    gp = link.gprime(u)
    gpp = link.gsecond(u)
    denom = g * (1.0 - g)
    resid = dd - g
    r = gp * resid / denom
    score = design.T @ r
    rprime = (gpp * resid - gp * gp) / denom - gp * gp * resid * (1.0 - 2.0 * g) / (denom * denom)
    hess = design.T @ (rprime[:, None] * design)
    return ll, score, hess


def _newton_direction(score, hess):
    # maximisation: solve hess @ step = -score; hess is negative definite
    # near the optimum, so factor -hess instead
    try:
        c = np.linalg.cholesky(-hess)
    except np.linalg.LinAlgError:
        return None
    step = np.linalg.solve(c.T, np.linalg.solve(c, score))
    return step


def fit_mle(table: ObservationTable, link: Link, opts: FitOptions | None = None) -> PropensityFit:
    """Maximum-likelihood fit by Newton's method with step halving.

    Starts at theta = 0 and declares convergence when the score sup-norm
    falls below ``opts.tol``. A runaway parameter norm with a score that
    refuses to shrink is reported as separation rather than as a fit.
    """
    if opts is None:
        opts = FitOptions()
    if table.n_treated == 0 or table.n_control == 0:
        raise RankDeficientError("both treatment groups are required to fit")
    design = table.design_matrix()
    d = table.d
    theta = np.zeros(design.shape[1])
    ll, score, hess = log_likelihood_parts(design, d, link, theta)
    step = _newton_direction(score, hess)
    if step is None:
        raise RankDeficientError("singular Hessian at theta = 0: design lacks full column rank")

    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        sup = float(np.max(np.abs(score)))
        if sup <= opts.tol:
            break
        if step is None:
            break
        lam = 1.0
        accepted = False
        # near the optimum the log-likelihood is flat to rounding while the
        # score still has resolution, so a score-norm decrease also accepts
        ll_slack = 1e-12 * (abs(ll) + 1.0)
        for _ in range(opts.max_halvings + 1):
            cand = theta + lam * step
            cand_ll, cand_score, cand_hess = log_likelihood_parts(design, d, link, cand)
            cand_sup = float(np.max(np.abs(cand_score)))
            if cand_ll >= ll or (cand_ll >= ll - ll_slack and cand_sup < sup):
                theta, ll, score, hess = cand, cand_ll, cand_score, cand_hess
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        if float(np.max(np.abs(theta))) > opts.theta_norm_guard:
            if float(np.max(np.abs(score))) > opts.tol:
                raise SeparationError(
                    f"parameter norm exceeded {opts.theta_norm_guard:g} with score "
                    f"sup-norm {np.max(np.abs(score)):.3e}: treatment looks separated"
                )
        step = _newton_direction(score, hess)

    sup = float(np.max(np.abs(score)))
    if sup > opts.tol:
        if float(np.max(np.abs(theta))) > opts.theta_norm_guard:
            raise SeparationError(
                f"parameter norm exceeded {opts.theta_norm_guard:g} with score "
                f"sup-norm {sup:.3e}: treatment looks separated"
            )
        raise NoConvergenceError(
            f"score sup-norm {sup:.3e} > tol {opts.tol:g} after {iterations} iterations"
        )

    # a vanishing score with every unit classified to saturation means the
    # likelihood supremum (zero) is approached along an unbounded direction
    fitted = link.g(design @ theta)
    if float(np.max(np.abs(np.asarray(d, dtype=np.float64) - fitted))) < 1e-6:
        raise SeparationError(
            "every unit is fitted to within 1e-6 of its treatment indicator: "
            "treatment is (near) perfectly separated"
        )

    # polish: extra full Newton steps tighten the score to machine level so
    # the fit is invariant to row order well below the documented 1e-12
    for _ in range(3):
        step = _newton_direction(score, hess)
        if step is None:
            break
        cand = theta + step
        cand_ll, cand_score, cand_hess = log_likelihood_parts(design, d, link, cand)
        if float(np.max(np.abs(cand_score))) < sup:
            theta, ll, score, hess = cand, cand_ll, cand_score, cand_hess
            sup = float(np.max(np.abs(score)))
        else:
            break

    vtheta = information_inverse(design, link, theta)
    return PropensityFit(
        theta_hat=theta,
        vtheta_hat=vtheta,
        loglik=ll,
        iterations=iterations,
        converged=True,
        grad_sup_norm=sup,
        link=link,
    )


def information_inverse(design: np.ndarray, link: Link, theta: np.ndarray) -> np.ndarray:
    """Inverse of the average Fisher information
    (1/n) sum g'(u)^2 / (g(1-g)) x x', symmetrized after inversion."""
    u = design @ np.asarray(theta, dtype=np.float64)
    g = np.clip(link.g(u), SCORE_EPS, 1.0 - SCORE_EPS)
    gp = link.gprime(u)
    w = gp * gp / (g * (1.0 - g))
    info = (design.T @ (w[:, None] * design)) / design.shape[0]
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformationError("average information matrix is singular")
    if not np.all(np.isfinite(inv)):
        raise SingularInformationError("average information matrix is numerically singular")
    return 0.5 * (inv + inv.T)


def vtheta_hat(table: ObservationTable, link: Link, theta: np.ndarray) -> np.ndarray:
    """Parameter variance estimator evaluated on a table's design matrix."""
    return information_inverse(table.design_matrix(), link, theta)


def predict(theta: np.ndarray, link: Link, x_rows: np.ndarray) -> np.ndarray:
    """Propensity scores g(theta'x), clamped into (1e-12, 1-1e-12)."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x_rows, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != theta.shape[0]:
        raise DimensionMismatchError(
            f"{x.shape[1]} covariate columns but parameter has length {theta.shape[0]}"
        )
    return np.clip(link.g(x @ theta), SCORE_EPS, 1.0 - SCORE_EPS)


def predict_fit(fit: PropensityFit, table: ObservationTable) -> np.ndarray:
    """Scores for a table under a fitted model (handles the intercept column)."""
    return predict(fit.theta_hat, fit.link, table.design_matrix())
