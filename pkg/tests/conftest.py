"""Shared fixtures and brute-force helpers for the test suite."""

from fractions import Fraction

import numpy as np
import pytest


@pytest.fixture
def toy6():
    """Six units in three natural cross-group pairs."""
    return {
        "scores": np.array([0.30, 0.32, 0.40, 0.42, 0.55, 0.56]),
        "d": np.array([1, 0, 0, 1, 0, 1]),
        "y": np.array([2.0, 1.0, 1.5, 2.5, 2.0, 3.5]),
    }


def random_match_instance(rng, n, tie_grid=None):
    """Random scores/treatment with both groups guaranteed nonempty."""
    scores = rng.random(n)
    if tie_grid:
        scores = np.round(scores * tie_grid) / tie_grid
    d = (rng.random(n) < 0.5).astype(np.int8)
    d[0] = 0
    d[-1] = 1
    return scores, d


def interval_sets(index):
    """Materialise each unit's match set from its stored interval."""
    sets = []
    for i in range(index.n):
        opp = index.sorted_index[1 - index.d[i]]
        sets.append(np.sort(opp[index.lo[i]:index.hi[i]]))
    return sets


def counting_identity_exact(index):
    """Both sides of the counting identity in exact rational arithmetic.

    Returns (sum over treated of w_i, matched-control count, and the same
    pair with groups swapped). The w are recomputed as Fractions from the
    integer match counts, so equality is exact, not approximate.
    """
    inv_m = [Fraction(0)] * index.n
    for j in range(index.n):
        if index.m[j] > 0:
            inv_m[j] = Fraction(1, int(index.m[j]))
    totals = {0: Fraction(0), 1: Fraction(0)}
    for i in range(index.n):
        opp = index.sorted_index[1 - index.d[i]]
        w_i = sum((inv_m[j] for j in opp[index.lo[i]:index.hi[i]]), Fraction(0))
        totals[int(index.d[i])] += w_i
    matched_controls = int(np.sum((index.d == 0) & (index.m > 0)))
    matched_treated = int(np.sum((index.d == 1) & (index.m > 0)))
    return totals[1], matched_controls, totals[0], matched_treated


def assert_sets_equal(a, b):
    assert len(a) == len(b)
    for i, (x, y) in enumerate(zip(a, b)):
        assert np.array_equal(np.sort(x), np.sort(y)), f"unit {i}: {x} vs {y}"


@pytest.fixture(scope="session")
def warm_kernels():
    """Force numba compilation before any timed test."""
    rng = np.random.default_rng(0)
    z = np.sort(rng.random(64))
    y = rng.random(64)
    pts = rng.random(8)
    from calipermatch import _kernels

    jlo, jhi = _kernels.source_windows(z, pts, 0.1, 9.0)
    _kernels.score_space_sums(z, y, pts, jlo, jhi, 0.1)
    _kernels.weighted_prime_sums(z, np.column_stack([y, y]), pts, jlo, jhi, 0.1)
    return True
