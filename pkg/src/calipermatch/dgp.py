"""Simulation laboratory: a configurable admissible data-generating process,
oracle computations of the true estimands and asymptotic variances, and the
Monte Carlo experiments behind the acceptance checks.

The DGP draws covariates uniformly from a compact box, assigns treatment with
probability g(theta0'x), and generates outcomes m_d(X) + bounded noise. For
two covariates, conditional moments given the index t = theta0'x reduce to
one-dimensional integrals over the box section {x : theta0'x = t}, evaluated
here by Gauss-Legendre quadrature; population variances are Monte Carlo
integrals of those conditional moments with reported standard errors.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ObservationTable
from .errors import CaliperMatchError, TooLargeError
from .inference import PipelineConfig, run_pipeline
from .matching import CaliperRule, build_match_index, caliper_value
from .propensity import LOGIT, Link

_GL_CACHE: dict = {}


def _gl_nodes(q: int):
    if q not in _GL_CACHE:
        _GL_CACHE[q] = np.polynomial.legendre.leggauss(q)
    return _GL_CACHE[q]


@dataclass(frozen=True)
class RegressionSpec:
    """A smooth regression function over the covariate box.

    kind "linear":    intercept + linear . x
    kind "quadratic": intercept + linear . x + quad . x^2 (elementwise)
    kind "index":     polynomial in t = theta0'x with coefficients
                      index_coefs[0] + index_coefs[1] t + ...
    """

    kind: str
    intercept: float = 0.0
    linear: tuple = ()
    quad: tuple = ()
    index_coefs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic", "index"):
            raise ValueError(f"unknown regression kind {self.kind!r}")

    def __call__(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        if self.kind == "index":
            return np.polynomial.polynomial.polyval(t, np.asarray(self.index_coefs))
        out = np.full(x.shape[0], self.intercept)
        out += x @ np.asarray(self.linear)
        if self.kind == "quadratic" and len(self.quad):
            out += (x * x) @ np.asarray(self.quad)
        return out


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded disturbance: uniform on [-halfwidth, halfwidth] or a normal
    truncated at +/- cut standard deviations, optionally rescaled by the
    smooth factor 1 + hetero_coef * x_1."""

    dist: str = "uniform"
    halfwidth: float = 0.5
    sd: float = 0.5
    cut: float = 3.0
    hetero_coef: float = 0.0

    def __post_init__(self):
        if self.dist not in ("uniform", "truncnormal"):
            raise ValueError(f"unknown noise dist {self.dist!r}")

    def base_variance(self) -> float:
        if self.dist == "uniform":
            return self.halfwidth**2 / 3.0
        c = self.cut
        phi_c = math.exp(-0.5 * c * c) / math.sqrt(2.0 * math.pi)
        mass = math.erf(c / math.sqrt(2.0))
        return self.sd**2 * (1.0 - 2.0 * c * phi_c / mass)

    def draw_base(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.dist == "uniform":
            return rng.uniform(-self.halfwidth, self.halfwidth, n)
        from scipy.special import ndtr, ndtri

        lo = ndtr(-self.cut)
        u = rng.uniform(lo, 1.0 - lo, n)
        return self.sd * ndtri(u)

    def scale(self, x: np.ndarray) -> np.ndarray:
        if self.hetero_coef == 0.0:
            return np.ones(x.shape[0])
        return 1.0 + self.hetero_coef * x[:, 0]

    def conditional_variance(self, x: np.ndarray) -> np.ndarray:
        s = self.scale(x)
        return self.base_variance() * s * s


@dataclass(frozen=True)
class AdmissibleDgp:
    """Single-index treatment assignment over a compact covariate box with
    smooth outcomes and bounded noise."""

    theta0: tuple
    m0: RegressionSpec
    m1: RegressionSpec
    link: Link = LOGIT
    box_low: tuple = (0.0, 0.0)
    box_high: tuple = (1.0, 1.0)
    noise0: NoiseSpec = field(default_factory=NoiseSpec)
    noise1: NoiseSpec = field(default_factory=NoiseSpec)
    covariate_law: str = "uniform"  # or "truncnormal": box-truncated independent normals
    covariate_sd: float = 0.35  # truncnormal sd as a fraction of each box width

    def __post_init__(self):
        theta = np.asarray(self.theta0, dtype=np.float64)
        if theta.shape[0] < 2:
            raise ValueError("need K >= 2 covariates")
        if int(np.sum(theta != 0.0)) < 2:
            raise ValueError("theta0 needs at least two nonzero coordinates")
        low = np.asarray(self.box_low, dtype=np.float64)
        high = np.asarray(self.box_high, dtype=np.float64)
        if low.shape != theta.shape or high.shape != theta.shape:
            raise ValueError("box bounds must match the covariate dimension")
        if not np.all(low < high):
            raise ValueError("box must have positive volume")
        if self.covariate_law not in ("uniform", "truncnormal"):
            raise ValueError(f"unknown covariate law {self.covariate_law!r}")

    @property
    def k(self) -> int:
        return len(self.theta0)

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.theta0, dtype=np.float64)

    def draw_x(self, rng: np.random.Generator, n: int) -> np.ndarray:
        low = np.asarray(self.box_low)
        high = np.asarray(self.box_high)
        if self.covariate_law == "uniform":
            return low + rng.random((n, self.k)) * (high - low)
        from scipy.special import ndtr, ndtri

        mid = 0.5 * (low + high)
        sd = self.covariate_sd * (high - low)
        a = ndtr((low - mid) / sd)
        b = ndtr((high - mid) / sd)
        u = a + rng.random((n, self.k)) * (b - a)
        return mid + sd * ndtri(u)

    def covariate_density(self, x: np.ndarray) -> np.ndarray:
        """Covariate density up to a constant factor (enough for the
        conditional-expectation ratios)."""
        if self.covariate_law == "uniform":
            return np.ones(x.shape[0])
        low = np.asarray(self.box_low)
        high = np.asarray(self.box_high)
        mid = 0.5 * (low + high)
        sd = self.covariate_sd * (high - low)
        z = (x - mid) / sd
        return np.exp(-0.5 * np.sum(z * z, axis=1))

    def score_bounds(self) -> tuple:
        """Exact compact support of the propensity score."""
        theta = self.theta
        low = np.asarray(self.box_low)
        high = np.asarray(self.box_high)
        t_min = float(np.sum(np.where(theta > 0, theta * low, theta * high)))
        t_max = float(np.sum(np.where(theta > 0, theta * high, theta * low)))
        return float(self.link.g(t_min)), float(self.link.g(t_max))


def _as_seed(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(entropy=int(seed))


def rep_seed(master_seed: int, rep: int) -> np.random.SeedSequence:
    """Deterministic per-repetition seed derived from a master seed."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(rep),))


def draw_sample(dgp: AdmissibleDgp, n: int, seed) -> tuple:
    """One i.i.d. draw: returns (ObservationTable, true score vector)."""
    rng = np.random.default_rng(_as_seed(seed))
    x = dgp.draw_x(rng, n)
    t = x @ dgp.theta
    scores = np.asarray(dgp.link.g(t), dtype=np.float64)
    d = (rng.random(n) < scores).astype(np.int8)
    nu0 = dgp.noise0.draw_base(rng, n) * dgp.noise0.scale(x)
    nu1 = dgp.noise1.draw_base(rng, n) * dgp.noise1.scale(x)
    y0 = dgp.m0(x, t) + nu0
    y1 = dgp.m1(x, t) + nu1
    y = np.where(d == 1, y1, y0)
    lo, hi = dgp.score_bounds()
    assert 0.0 < lo <= scores.min() + 1e-12 and scores.max() - 1e-12 <= hi < 1.0
    table = ObservationTable(y=y, d=d, x=x)
    return table, scores


# -- conditional moments by quadrature (K = 2) ----------------------------------

def _section_interval(dgp: AdmissibleDgp, t: np.ndarray):
    """x1-range of the box section {x : theta'x = t} for K = 2."""
    th1, th2 = dgp.theta
    l1, l2 = dgp.box_low
    u1, u2 = dgp.box_high
    a = (t - th2 * l2) / th1
    b = (t - th2 * u2) / th1
    lo = np.maximum(np.minimum(a, b), l1)
    hi = np.minimum(np.maximum(a, b), u1)
    return lo, hi


def conditional_expectation(dgp: AdmissibleDgp, h, t: np.ndarray, nodes: int = 16) -> np.ndarray:
    """E[h(X) | theta0'X = t] for covariates on a 2-d box.

    ``h`` maps an (m, 2) covariate array to an (m,) value array. The
    conditional law of x1 given the index lives on the box section, with
    density proportional to the covariate density along it, so the
    conditional mean is a density-weighted Gauss-Legendre average.
    """
    if dgp.k != 2:
        raise NotImplementedError("conditional quadrature is implemented for K = 2 only")
    t = np.asarray(t, dtype=np.float64)
    lo, hi = _section_interval(dgp, t)
    degenerate = hi <= lo
    if np.any(degenerate):
        raise ValueError("index value outside the support of theta0'X")
    u, w = _gl_nodes(nodes)
    th1, th2 = dgp.theta
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    num = np.zeros_like(t)
    den = np.zeros_like(t)
    for uq, wq in zip(u, w):
        x1 = mid + uq * half
        x2 = (t - th1 * x1) / th2
        pts = np.column_stack([x1, x2])
        psi = dgp.covariate_density(pts)
        num += wq * psi * h(pts)
        den += wq * psi
    return num / den


class ConditionalMoments:
    """Cached conditional-moment curves mu^d(t), sigma_d^2(t) for a 2-d DGP."""

    def __init__(self, dgp: AdmissibleDgp, nodes: int = 16):
        self.dgp = dgp
        self.nodes = nodes

    def mu(self, dval: int, t: np.ndarray) -> np.ndarray:
        m = self.dgp.m1 if dval == 1 else self.dgp.m0
        return conditional_expectation(
            self.dgp, lambda x: m(x, x @ self.dgp.theta), t, self.nodes
        )

    def sigma2(self, dval: int, t: np.ndarray) -> np.ndarray:
        m = self.dgp.m1 if dval == 1 else self.dgp.m0
        noise = self.dgp.noise1 if dval == 1 else self.dgp.noise0

        def m_val(x):
            return m(x, x @ self.dgp.theta)

        def m_sq(x):
            v = m(x, x @ self.dgp.theta)
            return v * v

        mean = conditional_expectation(self.dgp, m_val, t, self.nodes)
        mean_sq = conditional_expectation(self.dgp, m_sq, t, self.nodes)
        noise_var = conditional_expectation(self.dgp, noise.conditional_variance, t, self.nodes)
        return np.maximum(mean_sq - mean * mean, 0.0) + noise_var

    def effect_curve(self, t: np.ndarray) -> np.ndarray:
        return self.mu(1, t) - self.mu(0, t)


def constant_effect_value(dgp: AdmissibleDgp):
    """The exact treatment effect when m1 - m0 is constant, else None."""
    a, b = dgp.m0, dgp.m1
    if a.kind == b.kind == "index":
        ca = np.asarray(a.index_coefs, dtype=np.float64)
        cb = np.asarray(b.index_coefs, dtype=np.float64)
        size = max(ca.size, cb.size)
        ca = np.pad(ca, (0, size - ca.size))
        cb = np.pad(cb, (0, size - cb.size))
        if np.all(ca[1:] == cb[1:]):
            return float(cb[0] - ca[0])
        return None
    if a.kind in ("linear", "quadratic") and b.kind in ("linear", "quadratic"):
        la = np.asarray(a.linear, dtype=np.float64)
        lb = np.asarray(b.linear, dtype=np.float64)
        qa = np.asarray(a.quad if a.kind == "quadratic" else np.zeros_like(la))
        qb = np.asarray(b.quad if b.kind == "quadratic" else np.zeros_like(lb))
        if la.shape == lb.shape and np.all(la == lb) and np.all(qa == qb):
            return float(b.intercept - a.intercept)
        return None
    return None


def _analytic_mean(dgp: AdmissibleDgp, spec: RegressionSpec):
    """E[m(X)] over the uniform box, exact for linear and quadratic kinds."""
    if spec.kind == "index":
        return None
    low = np.asarray(dgp.box_low)
    high = np.asarray(dgp.box_high)
    mean_x = 0.5 * (low + high)
    value = spec.intercept + float(np.asarray(spec.linear) @ mean_x)
    if spec.kind == "quadratic" and len(spec.quad):
        mean_x2 = (low * low + low * high + high * high) / 3.0
        value += float(np.asarray(spec.quad) @ mean_x2)
    return value


@dataclass(frozen=True)
class OracleEffects:
    """True estimands and asymptotic variances of the matching estimators,
    with Monte Carlo standard errors of every integral."""

    tau: float
    tau_t: float
    p1: float
    v_tau: float
    v_sigma_pi: float
    v_total_ate: float
    v_tau_t: float
    v_t_sigma_pi: float
    v_total_att: float
    v_eff: float
    v_t_eff: float
    v_t_eff_pi: float
    v_t_gap_direct: float
    v_t_nn_gap: float  # ATT variance advantage over one-neighbor matching; divide by the neighbor count for M neighbors
    mc_n: int
    mc_se: dict

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "tau", "tau_t", "p1", "v_tau", "v_sigma_pi", "v_total_ate",
            "v_tau_t", "v_t_sigma_pi", "v_total_att", "v_eff", "v_t_eff",
            "v_t_eff_pi", "v_t_gap_direct", "v_t_nn_gap", "mc_n",
        )}
        out["mc_se"] = dict(self.mc_se)
        return out


def true_effects(dgp: AdmissibleDgp, mc_n: int = 10**6, seed: int = 0,
                 quad_nodes: int = 16, block: int = 200_000) -> OracleEffects:
    """Oracle estimands and variances by Monte Carlo over the covariate law,
    with conditional moments along the index evaluated by quadrature.

    The conditional-moment quadrature needs K = 2 covariates; the effects and
    efficiency bounds alone would work for any K, but the matching variances
    involve moments given the index, so the whole oracle is limited to K = 2.
    """
    if mc_n < 10**4:
        raise ValueError("mc_n must be at least 10^4")
    rng = np.random.default_rng(_as_seed(seed))
    moments = ConditionalMoments(dgp, nodes=quad_nodes)

    sums: dict = {}
    sq_sums: dict = {}
    total = 0

    def accumulate(name, values):
        sums[name] = sums.get(name, 0.0) + float(np.sum(values))
        sq_sums[name] = sq_sums.get(name, 0.0) + float(np.sum(values * values))

    # pass 1: tau, tau_t, p1 need to come first since variance integrands
    # are centered at them; draw everything once and keep per-block pieces
    blocks = []
    while total < mc_n:
        m = min(block, mc_n - total)
        x = dgp.draw_x(rng, m)
        t = x @ dgp.theta
        pi = np.asarray(dgp.link.g(t), dtype=np.float64)
        dm = dgp.m1(x, t) - dgp.m0(x, t)
        blocks.append((x, t, pi, dm))
        accumulate("pi", pi)
        accumulate("pi_dm", pi * dm)
        accumulate("dm", dm)
        total += m

    p1 = sums["pi"] / total
    tau_exact = constant_effect_value(dgp)
    if tau_exact is not None:
        tau, tau_se = tau_exact, 0.0
    else:
        analytic = (_analytic_mean(dgp, dgp.m1), _analytic_mean(dgp, dgp.m0))
        if analytic[0] is not None and analytic[1] is not None:
            tau, tau_se = analytic[0] - analytic[1], 0.0
        else:
            tau = sums["dm"] / total
            tau_se = math.sqrt(max(sq_sums["dm"] / total - tau**2, 0.0) / total)
    if tau_exact is not None:
        tau_t, tau_t_se = tau_exact, 0.0
    else:
        tau_t = sums["pi_dm"] / sums["pi"]
        resid_var = 0.0
        for _, _, pi, dm in blocks:
            resid = pi * dm - tau_t * pi
            resid_var += float(np.sum(resid * resid))
        tau_t_se = math.sqrt(resid_var / total) / (p1 * math.sqrt(total))

    names = [
        "v_tau", "v_sigma_pi", "v_total_ate", "v_tau_t_num", "v_t_sigma_num",
        "v_total_att_num", "v_eff", "v_t_eff_num", "v_t_eff_pi_num", "v_t_gap_num",
        "v_t_nn_num",
    ]
    for x, t, pi, dm in blocks:
        mu0 = moments.mu(0, t)
        mu1 = moments.mu(1, t)
        s2_0 = moments.sigma2(0, t)
        s2_1 = moments.sigma2(1, t)
        curve = mu1 - mu0
        nvx0 = dgp.noise0.conditional_variance(x)
        nvx1 = dgp.noise1.conditional_variance(x)

        vt = (curve - tau) ** 2
        vs = s2_0 / (1.0 - pi) + s2_1 / pi
        accumulate("v_tau", vt)
        accumulate("v_sigma_pi", vs)
        accumulate("v_total_ate", vt + vs)
        vtt = pi * (curve - tau_t) ** 2
        vts = pi * pi * s2_0 / (1.0 - pi) + pi * s2_1
        accumulate("v_tau_t_num", vtt)
        accumulate("v_t_sigma_num", vts)
        accumulate("v_total_att_num", vtt + vts)
        accumulate("v_eff", (dm - tau) ** 2 + nvx0 / (1.0 - pi) + nvx1 / pi)
        eff_att_common = pi * pi * nvx0 / (1.0 - pi) + pi * nvx1
        accumulate("v_t_eff_num", (dm - tau_t) ** 2 * pi + eff_att_common)
        accumulate("v_t_eff_pi_num", (dm - tau_t) ** 2 * pi * pi + eff_att_common)
        accumulate("v_t_gap_num", pi * (1.0 - pi) * (curve - tau_t) ** 2)
        accumulate("v_t_nn_num", 0.5 * s2_0 * pi * (2.0 + pi / (1.0 - pi)))

    means = {}
    ses = {}
    for name in names:
        m = sums[name] / total
        var = max(sq_sums[name] / total - m * m, 0.0)
        means[name] = m
        ses[name] = math.sqrt(var / total)

    inv_p1sq = 1.0 / (p1 * p1)
    mc_se = {
        "tau": tau_se,
        "tau_t": tau_t_se,
        "p1": math.sqrt(max(sq_sums["pi"] / total - p1**2, 0.0) / total),
        "v_tau": ses["v_tau"],
        "v_sigma_pi": ses["v_sigma_pi"],
        "v_total_ate": ses["v_total_ate"],
        "v_tau_t": ses["v_tau_t_num"] * inv_p1sq,
        "v_t_sigma_pi": ses["v_t_sigma_num"] * inv_p1sq,
        "v_total_att": ses["v_total_att_num"] * inv_p1sq,
        "v_eff": ses["v_eff"],
        "v_t_eff": ses["v_t_eff_num"] * inv_p1sq,
        "v_t_eff_pi": ses["v_t_eff_pi_num"] * inv_p1sq,
        "v_t_gap_direct": ses["v_t_gap_num"] * inv_p1sq,
        "v_t_nn_gap": ses["v_t_nn_num"] * inv_p1sq,
    }
    return OracleEffects(
        tau=tau,
        tau_t=tau_t,
        p1=p1,
        v_tau=means["v_tau"],
        v_sigma_pi=means["v_sigma_pi"],
        v_total_ate=means["v_total_ate"],
        v_tau_t=means["v_tau_t_num"] * inv_p1sq,
        v_t_sigma_pi=means["v_t_sigma_num"] * inv_p1sq,
        v_total_att=means["v_total_att_num"] * inv_p1sq,
        v_eff=means["v_eff"],
        v_t_eff=means["v_t_eff_num"] * inv_p1sq,
        v_t_eff_pi=means["v_t_eff_pi_num"] * inv_p1sq,
        v_t_gap_direct=means["v_t_gap_num"] * inv_p1sq,
        v_t_nn_gap=means["v_t_nn_num"] * inv_p1sq,
        mc_n=total,
        mc_se=mc_se,
    )


# -- ready-made model configurations ---------------------------------------------

def default_dgp(effect: str = "homogeneous", hetero: bool = False) -> AdmissibleDgp:
    """theta0 = (1, -1) on the unit square with a logit link.

    effect "homogeneous": m1 = m0 + 1 (tau = tau_t = 1 exactly);
    effect "heterogeneous": m1 - m0 = x1 (tau = 0.5 exactly).
    """
    noise = NoiseSpec(hetero_coef=0.3 if hetero else 0.0)
    m0 = RegressionSpec(kind="linear", intercept=0.0, linear=(1.0, 1.0))
    if effect == "homogeneous":
        m1 = RegressionSpec(kind="linear", intercept=1.0, linear=(1.0, 1.0))
    elif effect == "heterogeneous":
        m1 = RegressionSpec(kind="linear", intercept=0.0, linear=(2.0, 1.0))
    else:
        raise ValueError(f"unknown effect kind {effect!r}")
    return AdmissibleDgp(theta0=(1.0, -1.0), m0=m0, m1=m1, noise0=noise, noise1=noise)


def single_index_dgp() -> AdmissibleDgp:
    """Outcome regressions that depend on x only through theta0'x, so the
    matching estimators attain the efficiency bounds."""
    m0 = RegressionSpec(kind="index", index_coefs=(0.0, 1.0))
    m1 = RegressionSpec(kind="index", index_coefs=(1.0, 1.0, 0.5))
    return AdmissibleDgp(theta0=(1.0, -1.0), m0=m0, m1=m1)


# -- experiments -------------------------------------------------------------------

@dataclass
class CoverageSummary:
    n: int
    reps: int
    alpha: float
    mode: str
    true_tau: float
    true_tau_t: float
    coverage_ate: float
    coverage_att: float
    mean_width_ate: float
    mean_width_att: float
    mean_tau_hat: float
    sd_tau_hat: float
    mean_tau_t_hat: float
    sd_tau_t_hat: float
    mean_v_total_ate: float
    mean_v_total_att: float
    mean_theta_term: float
    mean_known_part_ate: float
    n_failed: int
    failures: list
    tau_hats: np.ndarray
    tau_t_hats: np.ndarray
    widths_ate: np.ndarray
    n_hat_fraction: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "reps": self.reps,
            "alpha": self.alpha,
            "mode": self.mode,
            "true_tau": self.true_tau,
            "true_tau_t": self.true_tau_t,
            "coverage_ate": self.coverage_ate,
            "coverage_att": self.coverage_att,
            "mean_width_ate": self.mean_width_ate,
            "mean_width_att": self.mean_width_att,
            "mean_tau_hat": self.mean_tau_hat,
            "sd_tau_hat": self.sd_tau_hat,
            "mean_tau_t_hat": self.mean_tau_t_hat,
            "sd_tau_t_hat": self.sd_tau_t_hat,
            "mean_v_total_ate": self.mean_v_total_ate,
            "mean_v_total_att": self.mean_v_total_att,
            "mean_theta_term": self.mean_theta_term,
            "mean_known_part_ate": self.mean_known_part_ate,
            "n_failed": self.n_failed,
            "failures": list(self.failures),
            "n_hat_fraction": self.n_hat_fraction,
        }


def coverage_experiment(dgp: AdmissibleDgp, n: int, reps: int, alpha: float,
                        mode: str, seed: int, config: PipelineConfig | None = None,
                        true_tau: float | None = None, true_tau_t: float | None = None,
                        threads: int = 1) -> CoverageSummary:
    """Repeatedly draw, estimate and record interval coverage of the truth.

    Per-repetition failures are counted with their reasons, not fatal.
    """
    if reps < 1:
        raise ValueError("need reps >= 1")
    if config is None:
        config = PipelineConfig(mode=mode, alpha=alpha)
    elif config.mode != mode or config.alpha != alpha:
        raise ValueError("config disagrees with the mode/alpha arguments")

    if true_tau is None or true_tau_t is None:
        exact = constant_effect_value(dgp)
        if exact is not None:
            true_tau = exact if true_tau is None else true_tau
            true_tau_t = exact if true_tau_t is None else true_tau_t
        else:
            oracle = true_effects(dgp, mc_n=200_000, seed=seed + 101)
            true_tau = oracle.tau if true_tau is None else true_tau
            true_tau_t = oracle.tau_t if true_tau_t is None else true_tau_t

    def one_rep(r: int):
        ss = rep_seed(seed, r)
        table, scores = draw_sample(dgp, n, ss)
        split_seed = int(ss.generate_state(1)[0])
        if mode == "known":
            report = run_pipeline(table, config, seed=split_seed, known_scores=scores)
        else:
            report = run_pipeline(table, config, seed=split_seed)
        return report

    results: list = [None] * reps
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(one_rep, r): r for r in range(reps)}
            for fut, r in futures.items():
                try:
                    results[r] = fut.result()
                except CaliperMatchError as exc:
                    results[r] = exc
    else:
        for r in range(reps):
            try:
                results[r] = one_rep(r)
            except CaliperMatchError as exc:
                results[r] = exc

    taus, taut, w_ate, w_att = [], [], [], []
    cov_ate, cov_att = [], []
    v_ate, v_att, th_terms, known_parts, nhat_fr = [], [], [], [], []
    failures = []
    for r, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append(f"rep {r}: {res}")
            continue
        taus.append(res.estimates.tau_hat)
        taut.append(res.estimates.tau_t_hat)
        w_ate.append(2 * res.ci_ate.halfwidth)
        w_att.append(2 * res.ci_att.halfwidth)
        cov_ate.append(res.ci_ate.contains(true_tau, tol=1e-12))
        cov_att.append(res.ci_att.contains(true_tau_t, tol=1e-12))
        v_ate.append(res.variance.v_total_ate)
        v_att.append(res.variance.v_total_att)
        th_terms.append(res.variance.theta_term)
        known_parts.append(res.variance.v_tau + res.variance.v_sigma_pi)
        nhat_fr.append(res.variance.n_hat / res.n_estimation)

    taus = np.asarray(taus)
    taut = np.asarray(taut)
    return CoverageSummary(
        n=n,
        reps=reps,
        alpha=alpha,
        mode=mode,
        true_tau=float(true_tau),
        true_tau_t=float(true_tau_t),
        coverage_ate=float(np.mean(cov_ate)) if cov_ate else float("nan"),
        coverage_att=float(np.mean(cov_att)) if cov_att else float("nan"),
        mean_width_ate=float(np.mean(w_ate)) if w_ate else float("nan"),
        mean_width_att=float(np.mean(w_att)) if w_att else float("nan"),
        mean_tau_hat=float(np.mean(taus)) if taus.size else float("nan"),
        sd_tau_hat=float(np.std(taus, ddof=1)) if taus.size > 1 else float("nan"),
        mean_tau_t_hat=float(np.mean(taut)) if taut.size else float("nan"),
        sd_tau_t_hat=float(np.std(taut, ddof=1)) if taut.size > 1 else float("nan"),
        mean_v_total_ate=float(np.mean(v_ate)) if v_ate else float("nan"),
        mean_v_total_att=float(np.mean(v_att)) if v_att else float("nan"),
        mean_theta_term=float(np.mean(th_terms)) if th_terms else float("nan"),
        mean_known_part_ate=float(np.mean(known_parts)) if known_parts else float("nan"),
        n_failed=len(failures),
        failures=failures,
        tau_hats=taus,
        tau_t_hats=taut,
        widths_ate=np.asarray(w_ate),
        n_hat_fraction=float(np.mean(nhat_fr)) if nhat_fr else float("nan"),
    )


@dataclass
class GrowthRow:
    n: int
    median_min_m: float
    median_max_m: float
    min_ratio: float  # median min M / log n
    max_ratio: float  # median max M / log n
    frac_all_matched: float
    violations: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "median_min_m": self.median_min_m,
            "median_max_m": self.median_max_m,
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "frac_all_matched": self.frac_all_matched,
            "violations": self.violations,
        }


def matches_growth_experiment(dgp: AdmissibleDgp, n_levels, reps: int,
                              rule: CaliperRule, seed: int,
                              mode: str = "known") -> list:
    """Distribution of match counts across sample sizes for a caliper rule.

    Returns one GrowthRow per level. Under the data-dependent rule the
    construction guarantees at least one match per unit; any violation is
    counted instead of assumed away.
    """
    levels = list(n_levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("n_levels must be strictly increasing")
    rows = []
    for li, n in enumerate(levels):
        mins, maxs = [], []
        violations = 0
        for r in range(reps):
            ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(li, r))
            table, scores = draw_sample(dgp, n, ss)
            if mode == "estimated":
                from .propensity import fit_mle, predict_fit

                fit = fit_mle(table, dgp.link)
                scores = predict_fit(fit, table)
            delta = caliper_value(rule, scores, table.d)
            index = build_match_index(scores, table.d, delta)
            mn = int(index.m.min())
            mx = int(index.m.max())
            mins.append(mn)
            maxs.append(mx)
            if rule.kind == "data-dependent" and mn < 1:
                violations += 1
        log_n = math.log(n)
        rows.append(GrowthRow(
            n=n,
            median_min_m=float(np.median(mins)),
            median_max_m=float(np.median(maxs)),
            min_ratio=float(np.median(mins)) / log_n,
            max_ratio=float(np.median(maxs)) / log_n,
            frac_all_matched=float(np.mean([m >= 1 for m in mins])),
            violations=violations,
        ))
    return rows


def brute_force_match_oracle(scores: np.ndarray, d: np.ndarray, delta: float) -> list:
    """Literal O(n^2) evaluation of the match-set definition; test oracle only."""
    scores = np.asarray(scores, dtype=np.float64)
    d = np.asarray(d)
    n = scores.shape[0]
    if n > 10**4:
        raise TooLargeError(f"brute-force oracle capped at n = 10^4, got {n}")
    sets = []
    for i in range(n):
        close = np.abs(scores[i] - scores) <= delta
        sets.append(np.flatnonzero(close & (d != d[i])))
    return sets
