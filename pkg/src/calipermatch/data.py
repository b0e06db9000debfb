"""Sample container, CSV ingestion and the random-halving split.

The observed sample is held column-oriented and immutable: an outcome vector
``y``, a 0/1 treatment vector ``d`` and an ``n x k`` covariate matrix ``x``.
Rows with missing or non-finite values make ingestion fail outright rather
than being dropped, because silently changing ``n`` would invalidate every
sample-size-dependent quantity computed downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DegenerateSplitError,
    NonBinaryTreatmentError,
    NonFiniteValueError,
    SchemaMismatchError,
    TooSmallError,
)


@dataclass(frozen=True)
class ObservationTable:
    """One i.i.d. sample of (outcome, treatment, covariates)."""

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    has_intercept: bool = False

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        d = np.ascontiguousarray(self.d, dtype=np.int8)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = y.shape[0]
        if n < 1:
            raise TooSmallError("need at least one observation")
        if d.shape[0] != n or x.shape[0] != n:
            raise TooSmallError(
                f"column lengths differ: y={n}, d={d.shape[0]}, x={x.shape[0]}"
            )
        raw_d = np.asarray(self.d)
        if not np.all((raw_d == 0) | (raw_d == 1)):
            bad = int(np.flatnonzero((raw_d != 0) & (raw_d != 1))[0])
            raise NonBinaryTreatmentError(f"treatment value {raw_d[bad]!r} at row {bad}")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise NonFiniteValueError(f"non-finite outcome at row {bad}")
        if not np.all(np.isfinite(x)):
            bad_row, bad_col = map(int, np.argwhere(~np.isfinite(x))[0])
            raise NonFiniteValueError(
                f"non-finite covariate at row {bad_row}, column {bad_col}"
            )
        y.setflags(write=False)
        d.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.d == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.d == 0))

    def design_matrix(self) -> np.ndarray:
        """Covariates for propensity fitting; appends a constant column when
        ``has_intercept`` is set (the constant is always the last column)."""
        if not self.has_intercept:
            return self.x
        return np.hstack([self.x, np.ones((self.n, 1))])

    def subset(self, indices: np.ndarray) -> "ObservationTable":
        idx = np.asarray(indices, dtype=np.intp)
        return ObservationTable(
            y=self.y[idx], d=self.d[idx], x=self.x[idx], has_intercept=self.has_intercept
        )


@dataclass(frozen=True)
class SplitSample:
    """Disjoint random halves of a sample: one to fit the propensity model,
    one to compute the matching estimators."""

    fit_half: ObservationTable
    estimate_half: ObservationTable
    fit_indices: np.ndarray = field(repr=False)
    estimate_indices: np.ndarray = field(repr=False)


def ingest_csv(path, schema: dict) -> ObservationTable:
    """Read and validate a CSV file into an :class:`ObservationTable`.

    ``schema`` maps roles to column names: ``{"y": ..., "d": ...,
    "x": [...], "intercept": bool}``. Any row with a missing named field
    fails the whole file.
    """
    y_col = schema["y"]
    d_col = schema["d"]
    x_cols = list(schema["x"])
    if not x_cols:
        raise SchemaMismatchError("need at least one covariate column")
    frame = pd.read_csv(path, float_precision="round_trip")
    needed = [y_col, d_col] + x_cols
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise SchemaMismatchError(f"missing column(s): {', '.join(missing)}")
    sub = frame[needed]
    if sub.isna().any().any():
        row = int(sub.isna().any(axis=1).idxmax())
        col = sub.columns[sub.isna().iloc[row].to_numpy().argmax()]
        raise NonFiniteValueError(f"missing value at row {row}, column {col!r}")
    d_raw = frame[d_col].to_numpy()
    d_float = np.asarray(d_raw, dtype=np.float64)
    if not np.all((d_float == 0.0) | (d_float == 1.0)):
        bad = int(np.flatnonzero((d_float != 0.0) & (d_float != 1.0))[0])
        raise NonBinaryTreatmentError(
            f"treatment value {d_raw[bad]!r} at row {bad}, column {d_col!r}"
        )
    return ObservationTable(
        y=frame[y_col].to_numpy(dtype=np.float64),
        d=d_float.astype(np.int8),
        x=frame[x_cols].to_numpy(dtype=np.float64),
        has_intercept=bool(schema.get("intercept", False)),
    )


def write_csv(table: ObservationTable, path, schema: dict | None = None) -> None:
    """Write a table back to CSV with full float64 precision, so that
    ``ingest_csv(write_csv(t))`` reproduces ``t`` exactly."""
    if schema is None:
        schema = {"y": "y", "d": "d", "x": [f"x{i + 1}" for i in range(table.k)]}
    cols = {schema["y"]: table.y, schema["d"]: table.d.astype(int)}
    for j, name in enumerate(schema["x"]):
        cols[name] = table.x[:, j]
    frame = pd.DataFrame(cols)
    frame.to_csv(path, index=False, float_format="%.17g")


def split_sample(table: ObservationTable, seed: int) -> SplitSample:
    """Randomly halve a sample into disjoint fit/estimate parts.

    A uniformly random permutation defines the halves, so file ordering
    cannot leak into the split. Both halves must contain at least one
    treated and one control unit; reseeded retries are attempted before
    declaring the sample degenerate.
    """
    n = table.n
    if n < 4:
        raise TooSmallError(f"need n >= 4 to split, got {n}")
    n_fit = n // 2
    for attempt in range(100):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        perm = rng.permutation(n)
        fit_idx = np.sort(perm[:n_fit])
        est_idx = np.sort(perm[n_fit:])
        d = table.d
        if (
            d[fit_idx].min() == 0
            and d[fit_idx].max() == 1
            and d[est_idx].min() == 0
            and d[est_idx].max() == 1
        ):
            return SplitSample(
                fit_half=table.subset(fit_idx),
                estimate_half=table.subset(est_idx),
                fit_indices=fit_idx,
                estimate_indices=est_idx,
            )
    raise DegenerateSplitError(
        "no halving with both treatment groups in both halves after 100 retries"
    )
