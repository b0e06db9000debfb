"""Caliper computation and match-set construction over propensity scores.

Match sets are never materialised: because the float difference s_i - a[k]
is monotone in a[k], the set {j : |s_i - s_j| <= delta} is a contiguous run
of the opposite group's score-sorted order, so each unit stores one (lo, hi)
interval. Construction is one sort per group plus two binary searches per
unit, O(n log n) total and O(n) memory.

Boundary semantics are literal: a pair matches iff abs(s_i - s_j) <= delta
evaluated in float64, ties at exactly delta included. The searchsorted
candidates are verified against that predicate and repaired by bisection
when rounding of s_i -/+ delta lands them one position off, so the intervals
agree with a brute-force scan bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroupError, NonPositiveCaliperError, TooSmallError


@dataclass(frozen=True)
class CaliperRule:
    """Caliper choice: a fixed multiple of log(n)/n, or the data-dependent
    maximum of the largest closest cross-group distance and log N_d/(N_d+1)."""

    kind: str  # "fixed" or "data-dependent"
    s: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "data-dependent"):
            raise ValueError(f"unknown caliper kind {self.kind!r}")
        if self.kind == "fixed" and not self.s > 0:
            raise ValueError("fixed caliper needs s > 0")

    @staticmethod
    def fixed(s: float = 1.0) -> "CaliperRule":
        return CaliperRule(kind="fixed", s=s)

    @staticmethod
    def data_dependent() -> "CaliperRule":
        return CaliperRule(kind="data-dependent")


@dataclass(frozen=True)
class MatchIndex:
    """Per-unit match sets as intervals into the opposite group's sorted
    score array, with match counts m and weights w."""

    scores: np.ndarray
    d: np.ndarray
    delta: float
    sorted_index: tuple  # (control order, treated order): global indices sorted by score
    lo: np.ndarray  # interval start into opposite group's sorted array
    hi: np.ndarray  # interval end (exclusive)
    m: np.ndarray  # match counts, hi - lo
    w: np.ndarray  # sum over matched j of 1/M_j

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def opposite_interval_sums(self, values: np.ndarray) -> np.ndarray:
        """For each unit i, the sum of ``values[j]`` over its match set."""
        values = np.asarray(values, dtype=np.float64)
        out = np.empty(self.n)
        for d in (0, 1):
            mine = self.d == d
            opp_order = self.sorted_index[1 - d]
            prefix = np.concatenate(([0.0], np.cumsum(values[opp_order])))
            out[mine] = prefix[self.hi[mine]] - prefix[self.lo[mine]]
        return out


@dataclass(frozen=True)
class MatchDiagnostics:
    n: int
    min_m: int
    max_m: int
    mean_m: float
    unmatched: int
    delta: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "min_m": self.min_m,
            "max_m": self.max_m,
            "mean_m": self.mean_m,
            "unmatched": self.unmatched,
            "delta": self.delta,
        }


def _split_groups(scores: np.ndarray, d: np.ndarray):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    d = np.asarray(d)
    idx0 = np.flatnonzero(d == 0)
    idx1 = np.flatnonzero(d == 1)
    if idx0.size == 0 or idx1.size == 0:
        raise EmptyGroupError("both treatment groups must be nonempty")
    order0 = idx0[np.argsort(scores[idx0], kind="stable")]
    order1 = idx1[np.argsort(scores[idx1], kind="stable")]
    return scores, order0, order1


def _bisect_first_true(a: np.ndarray, s: np.ndarray, delta: float, kind: str,
                       lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorised first-index-where-predicate-holds search on sorted a.

    kind "lo": predicate is (s - a[k]) <= delta (true on a suffix).
    kind "hi": predicate is (a[k] - s) > delta (true on a suffix).
    """
    lo = lo.copy()
    hi = hi.copy()
    while True:
        active = lo < hi
        if not np.any(active):
            return lo
        mid = (lo + hi) // 2
        vals = a[np.minimum(mid, a.shape[0] - 1)]
        if kind == "lo":
            pred = (s - vals) <= delta
        else:
            pred = (vals - s) > delta
        hi = np.where(active & pred, mid, hi)
        lo = np.where(active & ~pred, mid + 1, lo)


def _interval_bounds(a: np.ndarray, s: np.ndarray, delta: float):
    """(lo, hi) per query point s into sorted a such that a[lo:hi] is exactly
    {v in a : abs(s - v) <= delta} under literal float comparison."""
    m = a.shape[0]
    lo = np.searchsorted(a, s - delta, side="left")
    hi = np.searchsorted(a, s + delta, side="right")

    # verify the searchsorted candidates against the literal predicate;
    # rounding of s -/+ delta can land them a position off near the boundary
    at_lo = a[np.minimum(lo, m - 1)]
    before_lo = a[np.maximum(lo, 1) - 1]
    lo_ok = ((lo == m) | ((s - at_lo) <= delta)) & ((lo == 0) | ((s - before_lo) > delta))
    bad = np.flatnonzero(~lo_ok)
    if bad.size:
        lo = np.asarray(lo).copy()
        lo[bad] = _bisect_first_true(
            a, s[bad], delta, "lo",
            np.zeros(bad.size, dtype=lo.dtype), np.full(bad.size, m, dtype=lo.dtype),
        )

    at_hi = a[np.minimum(hi, m - 1)]
    before_hi = a[np.maximum(hi, 1) - 1]
    hi_ok = ((hi == m) | ((at_hi - s) > delta)) & ((hi == 0) | ((before_hi - s) <= delta))
    bad = np.flatnonzero(~hi_ok)
    if bad.size:
        hi = np.asarray(hi).copy()
        hi[bad] = _bisect_first_true(
            a, s[bad], delta, "hi",
            np.zeros(bad.size, dtype=hi.dtype), np.full(bad.size, m, dtype=hi.dtype),
        )
    return lo, hi


def largest_closest_distance(scores: np.ndarray, d: np.ndarray) -> float:
    """Largest over units of the smallest cross-group score distance."""
    scores, order0, order1 = _split_groups(scores, d)
    worst = 0.0
    for mine, opp_order in ((order1, order0), (order0, order1)):
        a = scores[opp_order]
        s = scores[mine]
        pos = np.searchsorted(a, s)
        right = np.abs(s - a[np.minimum(pos, a.shape[0] - 1)])
        left = np.abs(s - a[np.maximum(pos, 1) - 1])
        right[pos == a.shape[0]] = np.inf
        left[pos == 0] = np.inf
        worst = max(worst, float(np.max(np.minimum(left, right))))
    return worst


def caliper_value(rule: CaliperRule, scores: np.ndarray, d: np.ndarray) -> float:
    """Resolve a caliper rule to a numeric caliper for a score sample."""
    n = np.asarray(scores).shape[0]
    if rule.kind == "fixed":
        if n < 2:
            raise TooSmallError("fixed caliper needs n >= 2")
        return rule.s * math.log(n) / n
    d = np.asarray(d)
    n0 = int(np.sum(d == 0))
    n1 = int(np.sum(d == 1))
    if n0 < 2 or n1 < 2:
        raise TooSmallError(
            f"data-dependent caliper needs at least 2 units per group, got N0={n0}, N1={n1}"
        )
    return max(
        largest_closest_distance(scores, d),
        math.log(n0) / (n0 + 1),
        math.log(n1) / (n1 + 1),
    )


def build_match_index(scores: np.ndarray, d: np.ndarray, delta: float) -> MatchIndex:
    """Construct all match sets for a caliper ``delta``.

    Units with no opposite unit within the caliper get m = 0 and w = 0 and
    are simply skipped by the estimators.
    """
    if not delta > 0:
        raise NonPositiveCaliperError(f"caliper must be > 0, got {delta}")
    scores, order0, order1 = _split_groups(scores, d)
    d = np.asarray(d)
    n = scores.shape[0]
    lo = np.zeros(n, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    for dval, opp_order in ((0, order1), (1, order0)):
        mine = np.flatnonzero(d == dval)
        a = scores[opp_order]
        l, h = _interval_bounds(a, scores[mine], delta)
        lo[mine] = l
        hi[mine] = h
    m = hi - lo

    # weights via prefix sums of 1/M over each group's sorted order;
    # unmatched units never appear in any interval, their slot gets 0
    inv_m = np.zeros(n)
    matched = m > 0
    inv_m[matched] = 1.0 / m[matched]
    w = np.empty(n)
    for dval, opp_order in ((0, order1), (1, order0)):
        mine = d == dval
        prefix = np.concatenate(([0.0], np.cumsum(inv_m[opp_order])))
        w[mine] = prefix[hi[mine]] - prefix[lo[mine]]
    return MatchIndex(
        scores=scores,
        d=d.astype(np.int8),
        delta=float(delta),
        sorted_index=(order0, order1),
        lo=lo,
        hi=hi,
        m=m,
        w=w,
    )


def match_diagnostics(index: MatchIndex) -> MatchDiagnostics:
    m = index.m
    return MatchDiagnostics(
        n=index.n,
        min_m=int(m.min()),
        max_m=int(m.max()),
        mean_m=float(m.mean()),
        unmatched=int(np.sum(m == 0)),
        delta=index.delta,
    )
