"""Kernel-based estimators of the asymptotic variance components.

All conditional moments of the outcome given the score are estimated with
Gaussian-kernel ratio estimators at bandwidth gamma_n = kappa0 * n^(-beta),
evaluated only inside a boundary-trimmed window that drops a_n = kappa1 *
n^(-alpha) from each end of the observed score range. Derivatives with
respect to the score argument use K' in score space; derivatives with
respect to the index parameter use K' in index space (theta'x), which runs
on a different scale and therefore gets its own kappa0.

Negative component estimates are clamped at zero and flagged, never silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import ObservationTable
from .errors import DegenerateWindowError, DensityFloorError, EmptyGroupError
from .estimators import PointEstimates
from .propensity import PropensityFit

DENSITY_FLOOR = 1e-12


def gaussian_kernel(u):
    """Gaussian kernel K(u) and its derivative K'(u) = -u K(u)."""
    u = np.asarray(u, dtype=np.float64)
    k = _kernels.INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return k, -u * k


@dataclass(frozen=True)
class KernelBandwidths:
    """Bandwidth rates gamma_n = kappa0 n^-beta and window trim
    a_n = kappa1 n^-alpha, with 0 < alpha < beta < 1/4 so the bandwidth
    shrinks faster than the trim."""

    kappa0: float = 1.0
    kappa1: float = 0.1
    alpha: float = 1.0 / 4.5
    beta: float = 1.0 / 4.25
    kappa0_index: float | None = None  # default: sample sd of the index values
    cutoff: float | None = 9.0  # kernel truncated at |u| > cutoff; None = exact

    def __post_init__(self):
        if not (0.0 < self.alpha < self.beta < 0.25):
            raise ValueError(
                f"need 0 < alpha < beta < 1/4, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.kappa0 <= 0 or self.kappa1 <= 0:
            raise ValueError("kappa0 and kappa1 must be positive")

    def gamma(self, n: int) -> float:
        return self.kappa0 * float(n) ** (-self.beta)

    def gamma_index(self, n: int, index_values: np.ndarray) -> float:
        scale = self.kappa0_index
        if scale is None:
            scale = float(np.std(index_values))
            if scale <= 0:
                scale = self.kappa0
        return scale * float(n) ** (-self.beta)

    def a(self, n: int) -> float:
        return self.kappa1 * float(n) ** (-self.alpha)

    def to_dict(self) -> dict:
        return {
            "kappa0": self.kappa0,
            "kappa1": self.kappa1,
            "alpha": self.alpha,
            "beta": self.beta,
            "kappa0_index": self.kappa0_index,
            "cutoff": self.cutoff,
        }


@dataclass(frozen=True)
class TruncationWindow:
    lo: float
    hi: float
    in_window: np.ndarray
    n_hat: int


def truncation_window(scores: np.ndarray, a_n: float) -> TruncationWindow:
    """Boundary-trimmed window [min+a_n, max-a_n] over the observed scores."""
    scores = np.asarray(scores, dtype=np.float64)
    lo = float(scores.min()) + a_n
    hi = float(scores.max()) - a_n
    if not lo < hi:
        raise DegenerateWindowError(
            f"trim a_n={a_n:g} leaves an empty window [{lo:g}, {hi:g}]"
        )
    in_window = (scores >= lo) & (scores <= hi)
    n_hat = int(np.sum(in_window))
    if n_hat == 0:
        raise DegenerateWindowError("no observation falls inside the trimmed window")
    return TruncationWindow(lo=lo, hi=hi, in_window=in_window, n_hat=n_hat)


def group_kernel_sums(values, weights, points, gamma, derivative=False, cutoff=None):
    """Normalised kernel sum (1/(N gamma)) sum_j w_j K((v_j - p)/gamma).

    With ``derivative=True`` the kernel is replaced by K' and the
    normalisation by 1/(N gamma^2); the caller applies the sign and chain
    factors of the specific estimator (-1 for d/dp, (g^-1)'(p) for d/dtheta).
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), values.shape)
    points = np.atleast_1d(np.asarray(points, dtype=np.float64))
    n = values.shape[0]
    if n == 0:
        raise EmptyGroupError("kernel sum over an empty group")
    order = np.argsort(values, kind="stable")
    z = np.ascontiguousarray(values[order])
    w = np.ascontiguousarray(weights[order])
    jlo, jhi = _kernels.source_windows(z, points, gamma, cutoff)
    if derivative:
        raw = _kernels.weighted_prime_sums(z, w.reshape(-1, 1), points, jlo, jhi, gamma)
        return raw[:, 0] / (n * gamma * gamma)
    s0, s1, _, _, _ = _kernels.score_space_sums(z, w, points, jlo, jhi, gamma)
    # with unit weights s0 is the weighted sum itself; otherwise s1 carries it
    if np.all(w == 1.0):
        return s0 / (n * gamma)
    return s1 / (n * gamma)


class KernelMomentEstimator:
    """Shared evaluation engine for every kernel-smoothed quantity.

    Sorts each treatment group once by score and answers batched queries for
    the density, the first two conditional moments, and the score- and
    parameter-derivatives of the regression function.
    """

    def __init__(self, y, d, score_values, gamma_score, *, index_values=None,
                 design=None, gamma_index=None, link=None, theta=None,
                 cutoff=9.0, floor=DENSITY_FLOOR):
        self.y = np.asarray(y, dtype=np.float64)
        self.d = np.asarray(d)
        self.scores = np.asarray(score_values, dtype=np.float64)
        self.gamma_score = float(gamma_score)
        self.index_values = None if index_values is None else np.asarray(index_values, dtype=np.float64)
        self.design = None if design is None else np.asarray(design, dtype=np.float64)
        self.gamma_index = None if gamma_index is None else float(gamma_index)
        self.link = link
        self.theta = None if theta is None else np.asarray(theta, dtype=np.float64)
        self.cutoff = cutoff
        self.floor = floor
        self._groups = {}
        for dval in (0, 1):
            idx = np.flatnonzero(self.d == dval)
            if idx.size == 0:
                raise EmptyGroupError("both treatment groups are required")
            order = idx[np.argsort(self.scores[idx], kind="stable")]
            grp = {
                "n": idx.size,
                "z": np.ascontiguousarray(self.scores[order]),
                "y": np.ascontiguousarray(self.y[order]),
            }
            if self.index_values is not None:
                # g is monotone, so the score order also sorts the index
                grp["t"] = np.ascontiguousarray(self.index_values[order])
                cols = [self.design[order], self.y[order, None] * self.design[order]]
                grp["prime_weights"] = np.ascontiguousarray(np.hstack(cols))
            self._groups[dval] = grp

    # -- score-space quantities ------------------------------------------------

    def _score_sums(self, dval, points):
        grp = self._groups[dval]
        points = np.ascontiguousarray(points, dtype=np.float64)
        gamma = self.gamma_score
        jlo, jhi = _kernels.source_windows(grp["z"], points, gamma, self.cutoff)
        span = float(points.max() - points.min()) if points.size else 0.0
        if _kernels.interp_worthwhile(points.shape[0], jlo, jhi, span, gamma,
                                      n_sources=grp["n"]):
            # the sums are gamma-smooth functions of the point, so a
            # piecewise-Chebyshev fit through exact node values reproduces
            # them to ~1e-12 at a fraction of the cost
            node_x, lo, width = _kernels.chebyshev_grid(
                float(points.min()), float(points.max()), gamma)
            flat = np.ascontiguousarray(node_x.ravel())
            njlo, njhi = _kernels.source_windows(grp["z"], flat, gamma, self.cutoff)
            raw = _kernels.score_space_sums(grp["z"], grp["y"], flat, njlo, njhi, gamma)
            node_vals = np.ascontiguousarray(
                np.stack(raw, axis=1).reshape(node_x.shape[0], node_x.shape[1], 5))
            vals = _kernels.cheb_eval_matrix(node_x, node_vals, lo, width, points)
            s0, s1, s2, t0, t1 = (vals[:, c] for c in range(5))
        else:
            s0, s1, s2, t0, t1 = _kernels.score_space_sums(
                grp["z"], grp["y"], points, jlo, jhi, gamma
            )
        n_g = grp["n"] * gamma
        n_g2 = n_g * gamma
        return s0 / n_g, s1 / n_g, s2 / n_g, -t0 / n_g2, -t1 / n_g2

    def density(self, dval, points):
        return self._score_sums(dval, points)[0]

    def moments(self, dval, points, unit_labels=None):
        """(mu, mu2, sigma2, dmu_dp, h) at the given score points.

        sigma2 is clamped at zero; the second return flags whether any point
        was clamped. Raises DensityFloorError when the density estimate at a
        point falls below the floor.
        """
        h, q_mu, q_mu2, dp_h, dp_q_mu = self._score_sums(dval, points)
        bad = h <= self.floor
        if np.any(bad):
            which = np.flatnonzero(bad) if unit_labels is None else np.asarray(unit_labels)[bad]
            raise DensityFloorError(
                f"density of group {dval} below {self.floor:g} at {int(np.sum(bad))} point(s)",
                unit_indices=which,
            )
        mu = q_mu / h
        mu2 = q_mu2 / h
        sigma2 = mu2 - mu * mu
        clamped = bool(np.any(sigma2 < 0.0))
        sigma2 = np.maximum(sigma2, 0.0)
        dmu_dp = (dp_q_mu * h - q_mu * dp_h) / (h * h)
        return mu, mu2, sigma2, dmu_dp, h, clamped

    def mu(self, dval, points):
        return self.moments(dval, points)[0]

    def sigma2(self, dval, points):
        m = self.moments(dval, points)
        return m[2], m[5]

    # -- parameter derivatives ---------------------------------------------------

    def _theta_prime_sums(self, dval, t_points):
        grp = self._groups[dval]
        t_points = np.ascontiguousarray(t_points, dtype=np.float64)
        gamma = self.gamma_index
        jlo, jhi = _kernels.source_windows(grp["t"], t_points, gamma, self.cutoff)
        span = float(t_points.max() - t_points.min()) if t_points.size else 0.0
        ncols = grp["prime_weights"].shape[1]
        if _kernels.interp_worthwhile(t_points.shape[0], jlo, jhi, span, gamma,
                                      n_sources=grp["n"]):
            node_x, lo, width = _kernels.chebyshev_grid(
                float(t_points.min()), float(t_points.max()), gamma)
            flat = np.ascontiguousarray(node_x.ravel())
            njlo, njhi = _kernels.source_windows(grp["t"], flat, gamma, self.cutoff)
            node_raw = _kernels.weighted_prime_sums(
                grp["t"], grp["prime_weights"], flat, njlo, njhi, gamma)
            node_vals = np.ascontiguousarray(
                node_raw.reshape(node_x.shape[0], node_x.shape[1], ncols))
            raw = _kernels.cheb_eval_matrix(node_x, node_vals, lo, width, t_points)
        else:
            raw = _kernels.weighted_prime_sums(
                grp["t"], grp["prime_weights"], t_points, jlo, jhi, gamma
            )
        return raw / (grp["n"] * gamma * gamma)

    def dmu_dtheta(self, dval, points, t_points, unit_labels=None):
        """Rows of the estimated gradient of mu^d with respect to theta at
        score points `points` (with matching index values `t_points`)."""
        if self.index_values is None:
            raise ValueError("estimator was built without index-space inputs")
        h, q_mu, _, _, _ = self._score_sums(dval, points)
        bad = h <= self.floor
        if np.any(bad):
            which = np.flatnonzero(bad) if unit_labels is None else np.asarray(unit_labels)[bad]
            raise DensityFloorError(
                f"density of group {dval} below {self.floor:g} at {int(np.sum(bad))} point(s)",
                unit_indices=which,
            )
        k = self.design.shape[1]
        raw = self._theta_prime_sums(dval, t_points)
        d_h = raw[:, :k]
        d_q = raw[:, k:]
        chain = self.link.inverse_prime(points)[:, None]
        d_h = chain * d_h
        d_q = chain * d_q
        return (d_q * h[:, None] - q_mu[:, None] * d_h) / (h * h)[:, None]

    def lambda_rows(self, dval, x_rows):
        """Estimated derivative of theta -> mu^d(theta, g(theta'x)) at the
        fitted theta, one row per input covariate row."""
        if self.theta is None:
            raise ValueError("estimator was built without a parameter vector")
        x = np.asarray(x_rows, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.theta.shape[0]:
            raise ValueError(
                f"covariate rows have {x.shape[1]} columns, parameter has {self.theta.shape[0]}"
            )
        t = x @ self.theta
        p = self.link.g(t)
        partial_theta = self.dmu_dtheta(dval, p, t)
        _, _, _, dmu_dp, _, _ = self.moments(dval, p)
        return partial_theta + dmu_dp[:, None] * self.link.gprime(t)[:, None] * x


@dataclass(frozen=True)
class VarianceReport:
    """Estimated variance components and their assembly into the total
    asymptotic variances for ATE and ATT."""

    v_tau: float
    v_sigma_pi: float
    theta_term: float
    v_tau_t: float
    v_t_sigma_pi: float
    theta_term_t: float
    v_total_ate: float
    v_total_att: float
    n_hat: int
    window_lo: float
    window_hi: float
    clamped: dict
    q_hat_1: np.ndarray | None = None
    q_hat_0: np.ndarray | None = None
    q_hat_t1: np.ndarray | None = None
    q_hat_t0: np.ndarray | None = None
    bandwidth_score: float = field(default=float("nan"))
    bandwidth_index: float | None = None

    def to_dict(self) -> dict:
        def vec(v):
            return None if v is None else [float(c) for c in v]

        return {
            "v_tau": self.v_tau,
            "v_sigma_pi": self.v_sigma_pi,
            "theta_term": self.theta_term,
            "v_tau_t": self.v_tau_t,
            "v_t_sigma_pi": self.v_t_sigma_pi,
            "theta_term_t": self.theta_term_t,
            "v_total_ate": self.v_total_ate,
            "v_total_att": self.v_total_att,
            "n_hat": self.n_hat,
            "window_lo": self.window_lo,
            "window_hi": self.window_hi,
            "clamped": dict(self.clamped),
            "q_hat_1": vec(self.q_hat_1),
            "q_hat_0": vec(self.q_hat_0),
            "q_hat_t1": vec(self.q_hat_t1),
            "q_hat_t0": vec(self.q_hat_t0),
            "bandwidth_score": self.bandwidth_score,
            "bandwidth_index": self.bandwidth_index,
        }


def _clamp(value: float, name: str, flags: dict) -> float:
    if value < 0.0:
        flags[name] = True
        return 0.0
    flags.setdefault(name, False)
    return value


def _shared_components(est: KernelMomentEstimator, scores, d, window,
                       estimates: PointEstimates, flags: dict):
    pts = np.ascontiguousarray(scores[window.in_window])
    labels = np.flatnonzero(window.in_window)
    d_in = np.asarray(d)[window.in_window].astype(np.float64)
    mu0, _, s2_0, dmu_dp0, h0, cl0 = est.moments(0, pts, unit_labels=labels)
    mu1, _, s2_1, dmu_dp1, h1, cl1 = est.moments(1, pts, unit_labels=labels)
    flags["sigma2_0"] = cl0
    flags["sigma2_1"] = cl1

    p1 = estimates.p1_hat
    gap2 = (mu1 - mu0) ** 2
    v_tau = float(np.mean(gap2)) - estimates.tau_hat**2
    v_tau_t = float(np.mean(d_in * gap2)) / p1**2 - estimates.tau_t_hat**2 / p1
    v_sigma = float(np.mean(s2_0 / (1.0 - pts) + s2_1 / pts))
    v_t_sigma = float(np.mean(pts * pts * s2_0 / (1.0 - pts) + pts * s2_1)) / p1**2
    return {
        "pts": pts,
        "labels": labels,
        "d_in": d_in,
        "dmu_dp": (dmu_dp0, dmu_dp1),
        "v_tau": _clamp(v_tau, "v_tau", flags),
        "v_tau_t": _clamp(v_tau_t, "v_tau_t", flags),
        "v_sigma_pi": _clamp(v_sigma, "v_sigma_pi", flags),
        "v_t_sigma_pi": _clamp(v_t_sigma, "v_t_sigma_pi", flags),
    }


def variance_components_known(scores, y, d, estimates: PointEstimates,
                              bw: KernelBandwidths) -> VarianceReport:
    """Variance components when the scores are taken as known: the parameter
    uncertainty term is identically zero."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    window = truncation_window(scores, bw.a(n))
    gamma = bw.gamma(n)
    est = KernelMomentEstimator(y, d, scores, gamma, cutoff=bw.cutoff)
    flags: dict = {}
    parts = _shared_components(est, scores, d, window, estimates, flags)
    flags["theta_term"] = False
    flags["theta_term_t"] = False
    return VarianceReport(
        v_tau=parts["v_tau"],
        v_sigma_pi=parts["v_sigma_pi"],
        theta_term=0.0,
        v_tau_t=parts["v_tau_t"],
        v_t_sigma_pi=parts["v_t_sigma_pi"],
        theta_term_t=0.0,
        v_total_ate=parts["v_tau"] + parts["v_sigma_pi"],
        v_total_att=parts["v_tau_t"] + parts["v_t_sigma_pi"],
        n_hat=window.n_hat,
        window_lo=window.lo,
        window_hi=window.hi,
        clamped=flags,
        bandwidth_score=gamma,
    )


def variance_components(table: ObservationTable, fit: PropensityFit,
                        estimates: PointEstimates,
                        bw: KernelBandwidths) -> VarianceReport:
    """Full variance estimate for matching on a fitted propensity score.

    Evaluates every kernel component at the in-window sample points of
    ``table`` (the estimation sample) and adds the parameter-uncertainty
    quadratic form built from the fitted parameter's variance estimate.
    """
    if not fit.converged:
        raise ValueError("propensity fit did not converge")
    if estimates.n1 != table.n_treated:
        raise ValueError("point estimates were not computed on this table")
    design = table.design_matrix()
    theta = fit.theta_hat
    link = fit.link
    t_values = design @ theta
    scores = link.g(t_values)
    n = table.n
    window = truncation_window(scores, bw.a(n))
    gamma_s = bw.gamma(n)
    gamma_t = bw.gamma_index(n, t_values)
    est = KernelMomentEstimator(
        table.y, table.d, scores, gamma_s,
        index_values=t_values, design=design, gamma_index=gamma_t,
        link=link, theta=theta, cutoff=bw.cutoff,
    )
    flags: dict = {}
    parts = _shared_components(est, scores, table.d, window, estimates, flags)

    pts = parts["pts"]
    labels = parts["labels"]
    t_in = t_values[window.in_window]
    x_in = design[window.in_window]
    d_in = parts["d_in"]
    gprime_x = link.gprime(t_in)[:, None] * x_in

    q_rows = {}
    for dval in (0, 1):
        partial_theta = est.dmu_dtheta(dval, pts, t_in, unit_labels=labels)
        lam = partial_theta + parts["dmu_dp"][dval][:, None] * gprime_x
        q_rows[dval] = lam
    q1 = q_rows[1].mean(axis=0)
    q0 = q_rows[0].mean(axis=0)
    qt1 = (d_in[:, None] * q_rows[1]).sum(axis=0) / window.n_hat
    qt0 = (d_in[:, None] * q_rows[0]).sum(axis=0) / window.n_hat

    vtheta = fit.vtheta_hat
    dq = q1 - q0
    dqt = qt1 - qt0
    p1 = estimates.p1_hat
    theta_term = _clamp(float(dq @ vtheta @ dq), "theta_term", flags)
    theta_term_t = _clamp(float(dqt @ vtheta @ dqt) / p1**2, "theta_term_t", flags)

    return VarianceReport(
        v_tau=parts["v_tau"],
        v_sigma_pi=parts["v_sigma_pi"],
        theta_term=theta_term,
        v_tau_t=parts["v_tau_t"],
        v_t_sigma_pi=parts["v_t_sigma_pi"],
        theta_term_t=theta_term_t,
        v_total_ate=parts["v_tau"] + parts["v_sigma_pi"] + theta_term,
        v_total_att=parts["v_tau_t"] + parts["v_t_sigma_pi"] + theta_term_t,
        n_hat=window.n_hat,
        window_lo=window.lo,
        window_hi=window.hi,
        clamped=flags,
        q_hat_1=q1,
        q_hat_0=q0,
        q_hat_t1=qt1,
        q_hat_t0=qt0,
        bandwidth_score=gamma_s,
        bandwidth_index=gamma_t,
    )

