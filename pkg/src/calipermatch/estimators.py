"""Caliper matching point estimators of ATE and ATT.

Both estimators are computed from the weighted single-pass form
(1/n) sum (2d-1)(1{M>0} + w) y and cross-checked in debug mode against the
equivalent match-mean form that averages outcomes over each match set. The
code is score-agnostic: whether the scores behind the MatchIndex are true,
user-supplied or fitted makes no difference here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatchError, NoTreatedError
from .matching import MatchIndex


@dataclass(frozen=True)
class PointEstimates:
    tau_hat: float
    tau_t_hat: float
    n_used_ate: int
    n1: int
    p1_hat: float
    unmatched_treated: int

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "tau_t_hat": self.tau_t_hat,
            "n_used_ate": self.n_used_ate,
            "n1": self.n1,
            "p1_hat": self.p1_hat,
            "unmatched_treated": self.unmatched_treated,
        }


def _check_lengths(y: np.ndarray, index: MatchIndex) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != index.n:
        raise LengthMismatchError(
            f"outcome has {y.shape[0]} rows but the match index was built on {index.n}"
        )
    return y


def _match_mean_contrasts(y: np.ndarray, index: MatchIndex) -> np.ndarray:
    """Per-unit (own outcome minus match-set mean), zero where unmatched."""
    out = np.zeros(index.n)
    matched = index.m > 0
    sums = index.opposite_interval_sums(y)
    out[matched] = y[matched] - sums[matched] / index.m[matched]
    return out


def ate_hat(y: np.ndarray, index: MatchIndex) -> float:
    """Average treatment effect estimate over all matched units."""
    y = _check_lengths(y, index)
    d = index.d.astype(np.float64)
    sign = 2.0 * d - 1.0
    matched = (index.m > 0).astype(np.float64)
    value = float(np.sum(sign * (matched + index.w) * y) / index.n)
    if __debug__:
        contrast = _match_mean_contrasts(y, index)
        direct = float(np.sum((2.0 * index.d - 1.0) * contrast) / index.n)
        assert abs(value - direct) <= 1e-10 * max(1.0, abs(value)), (
            f"weighted and match-mean ATE forms disagree: {value} vs {direct}"
        )
    return value


def att_hat(y: np.ndarray, index: MatchIndex) -> float:
    """Average treatment effect on the treated."""
    y = _check_lengths(y, index)
    d = index.d.astype(np.float64)
    n1 = int(np.sum(index.d == 1))
    if n1 == 0:
        raise NoTreatedError("no treated units")
    matched = (index.m > 0).astype(np.float64)
    value = float(np.sum((matched * d - (1.0 - d) * index.w) * y) / n1)
    if __debug__:
        contrast = _match_mean_contrasts(y, index)
        direct = float(np.sum(index.d * contrast) / n1)
        assert abs(value - direct) <= 1e-10 * max(1.0, abs(value)), (
            f"weighted and match-mean ATT forms disagree: {value} vs {direct}"
        )
    return value


def ate_hat_match_mean(y: np.ndarray, index: MatchIndex) -> float:
    """Match-mean form of the ATE estimator, exposed for cross-checking."""
    y = _check_lengths(y, index)
    contrast = _match_mean_contrasts(y, index)
    return float(np.sum((2.0 * index.d - 1.0) * contrast) / index.n)


def att_hat_match_mean(y: np.ndarray, index: MatchIndex) -> float:
    """Match-mean form of the ATT estimator, exposed for cross-checking."""
    y = _check_lengths(y, index)
    n1 = int(np.sum(index.d == 1))
    if n1 == 0:
        raise NoTreatedError("no treated units")
    contrast = _match_mean_contrasts(y, index)
    return float(np.sum(index.d * contrast) / n1)


def point_estimates(y: np.ndarray, index: MatchIndex) -> PointEstimates:
    """Both effect estimates plus the sample-composition counts reported
    alongside them."""
    y = _check_lengths(y, index)
    n1 = int(np.sum(index.d == 1))
    if n1 == 0:
        raise NoTreatedError("no treated units")
    return PointEstimates(
        tau_hat=ate_hat(y, index),
        tau_t_hat=att_hat(y, index),
        n_used_ate=int(np.sum(index.m > 0)),
        n1=n1,
        p1_hat=n1 / index.n,
        unmatched_treated=int(np.sum((index.d == 1) & (index.m == 0))),
    )
