"""Panel data model, long-format CSV ingestion and positivity screening.

Conventions used throughout the package:

* subjects are rows ``i = 0..n-1`` of every array;
* time points are *labels* ``t = 1..T`` (the re-indexed, sorted time values);
  array column ``t - 1`` holds time ``t``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError, SchemaError

__all__ = [
    "ColumnSchema",
    "PanelDataset",
    "TimeCounts",
    "ValidationReport",
    "load_panel_csv",
    "write_panel_csv",
    "tilde_x",
    "design_array",
    "validate",
]


@dataclass(frozen=True)
class ColumnSchema:
    subject: str = "id"
    time: str = "time"
    outcome: str = "y"
    treatment: str = "a"
    baseline: tuple = ()
    modifiers: tuple = ()
    prognostic: tuple = ()
    missing: str = "NA"

    def __post_init__(self):
        for name in ("baseline", "modifiers", "prognostic"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        cols = self.columns()
        dup = {c for c in cols if cols.count(c) > 1}
        if dup:
            raise SchemaError(f"column names used more than once: {sorted(dup)}")

    def columns(self):
        return [self.subject, self.time, self.outcome, self.treatment,
                *self.baseline, *self.modifiers, *self.prognostic]

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Rectangular ``n x T`` panel.

    Y : (n, T) outcomes, NaN where unobserved
    A : (n, T) 0/1 treatment indicators
    Z : (n, d_z) baseline covariates
    X : (n, T, d_x) time-varying effect modifiers
    U : (n, T, d_u) time-varying prognostic factors
    M : (n, T) observation mask, True where Y is observed

    Arrays are made read-only on construction.
    """

    Y: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    U: np.ndarray
    M: np.ndarray
    ids: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    z_names: tuple = ()
    x_names: tuple = ()
    u_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2:
            raise DataError("Y must be an (n, T) array")
        n, T = Y.shape
        A = np.asarray(self.A)
        M = np.asarray(self.M)
        if A.shape != (n, T) or M.shape != (n, T):
            raise DataError("A and M must have the same (n, T) shape as Y")
        if not np.isin(A, (0, 1)).all():
            raise DataError("treatment indicators must be 0/1")
        if not np.isin(M, (0, 1)).all():
            raise DataError("observation mask must be 0/1")
        A = A.astype(np.int8)
        M = M.astype(bool)
        Z = np.asarray(self.Z, dtype=float).reshape(n, -1)
        X = np.asarray(self.X, dtype=float).reshape(n, T, -1)
        U = np.asarray(self.U, dtype=float).reshape(n, T, -1)
        for name, arr in (("Z", Z), ("X", X), ("U", U)):
            if not np.isfinite(arr).all():
                raise DataError(f"{name} contains missing or non-finite values")
        if not np.isfinite(Y[M]).all():
            raise DataError("Y must be finite wherever M = 1")
        Y = np.where(M, Y, np.nan)

        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        times = np.arange(1, T + 1) if self.times is None else np.asarray(self.times)
        if ids.shape != (n,) or times.shape != (T,):
            raise DataError("ids/times length mismatch")

        names = {
            "z_names": tuple(self.z_names) or tuple(f"z{k + 1}" for k in range(Z.shape[1])),
            "x_names": tuple(self.x_names) or tuple(f"x{k + 1}" for k in range(X.shape[2])),
            "u_names": tuple(self.u_names) or tuple(f"u{k + 1}" for k in range(U.shape[2])),
        }
        for key, arr in (("z_names", Z.shape[1]), ("x_names", X.shape[2]), ("u_names", U.shape[2])):
            if len(names[key]) != arr:
                raise DataError(f"{key} has wrong length")
        if set(names["x_names"]) & set(names["u_names"]):
            raise DataError("modifier and prognostic columns must be disjoint")

        for key, val in (("Y", Y), ("A", A), ("Z", Z), ("X", X), ("U", U), ("M", M),
                         ("ids", ids), ("times", times)):
            object.__setattr__(self, key, _freeze(val))
        for key, val in names.items():
            object.__setattr__(self, key, val)

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def T(self):
        return self.Y.shape[1]

    @property
    def d(self):
        """Effect-vector dimension ``1 + d_z + d_x``."""
        return 1 + self.Z.shape[1] + self.X.shape[2]

    @property
    def coef_names(self):
        return ("intercept", *self.z_names, *self.x_names)

    def take(self, rows):
        """Subset (or reorder) subjects."""
        rows = np.asarray(rows)
        return PanelDataset(
            Y=self.Y[rows], A=self.A[rows], Z=self.Z[rows], X=self.X[rows], U=self.U[rows],
            M=self.M[rows], ids=self.ids[rows], times=self.times,
            z_names=self.z_names, x_names=self.x_names, u_names=self.u_names, meta=dict(self.meta),
        )

    def with_mask(self, M):
        return PanelDataset(
            Y=np.where(M, self.Y, np.nan), A=self.A, Z=self.Z, X=self.X, U=self.U,
            M=M, ids=self.ids, times=self.times,
            z_names=self.z_names, x_names=self.x_names, u_names=self.u_names, meta=dict(self.meta),
        )


def _check_time(data, t):
    if not 1 <= t <= data.T:
        raise IndexError(f"time {t} outside 1..{data.T}")


def tilde_x(data: PanelDataset, i: int, t: int) -> np.ndarray:
    """Design vector ``(1, Z_i, X_it)`` for subject row ``i`` at time label ``t``."""
    if not 0 <= i < data.n:
        raise IndexError(f"subject row {i} outside 0..{data.n - 1}")
    _check_time(data, t)
    return np.concatenate(([1.0], data.Z[i], data.X[i, t - 1]))


def design_array(data: PanelDataset) -> np.ndarray:
    """All design vectors at once, shape (n, T, d)."""
    n, T = data.n, data.T
    out = np.empty((n, T, data.d))
    out[:, :, 0] = 1.0
    dz = data.Z.shape[1]
    out[:, :, 1:1 + dz] = data.Z[:, None, :]
    out[:, :, 1 + dz:] = data.X
    return out


def load_panel_csv(path, schema: ColumnSchema) -> PanelDataset:
    """Read a long-format panel (one row per subject-time).

    Outcome cells equal to ``schema.missing`` (or empty) are masked. Every
    subject must have a row at every time point because treatment and
    covariates are required for the full history; errors name the 1-based
    data row (header excluded).
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed CSV
        raise SchemaError(f"cannot parse {path}: {exc}") from exc
    missing_cols = [c for c in schema.columns() if c not in df.columns]
    if missing_cols:
        raise SchemaError(f"missing column(s) in {path}: {missing_cols}")
    if df.empty:
        raise DataError(f"{path} has no data rows")
    df = df.reset_index(drop=True)
    df["_row"] = np.arange(1, len(df) + 1)

    def to_float(col):
        vals = _parse_floats(df[col])
        bad = ~np.isfinite(vals)
        if bad.any():
            row = int(df["_row"][bad.argmax()])
            raise DataError(f"missing or non-numeric value in column {col!r} at row {row}")
        return vals

    a_raw = df[schema.treatment].str.strip()
    bad = ~a_raw.isin(["0", "1", "0.0", "1.0"])
    if bad.any():
        row = int(df["_row"][bad.to_numpy().argmax()])
        raise DataError(f"non-binary treatment at row {row}")
    a_vals = a_raw.astype(float).astype(np.int8).to_numpy()

    time_num = pd.to_numeric(df[schema.time], errors="coerce")
    if time_num.isna().any():
        row = int(df["_row"][time_num.isna().to_numpy().argmax()])
        raise DataError(f"non-numeric time at row {row}")
    times = np.unique(time_num.to_numpy())
    ids = np.array(sorted(df[schema.subject].unique(), key=_natural_key), dtype=object)
    n, T = len(ids), len(times)
    id_index = {s: k for k, s in enumerate(ids)}
    ii = df[schema.subject].map(id_index).to_numpy()
    tt = np.searchsorted(times, time_num.to_numpy())

    seen = np.zeros((n, T), dtype=int)
    np.add.at(seen, (ii, tt), 1)
    if (seen > 1).any():
        i, t = np.argwhere(seen > 1)[0]
        raise DataError(f"duplicate rows for subject {ids[i]!r} at time {times[t]}")
    if (seen == 0).any():
        i, t = np.argwhere(seen == 0)[0]
        raise DataError(
            f"subject {ids[i]!r} has no row at time {times[t]}; treatment and covariates are "
            f"required at every time point (use outcome {schema.missing!r} for a missing outcome)"
        )

    y_raw = df[schema.outcome].str.strip()
    y_missing = (y_raw == schema.missing) | (y_raw == "")
    y_num = _parse_floats(y_raw.where(~y_missing, "nan"))
    bad = ~np.isfinite(y_num) & ~y_missing.to_numpy()
    if bad.any():
        row = int(df["_row"][bad.argmax()])
        raise DataError(f"non-numeric outcome at row {row}")

    Y = np.full((n, T), np.nan)
    A = np.zeros((n, T), dtype=np.int8)
    M = np.zeros((n, T), dtype=bool)
    Y[ii, tt] = y_num
    A[ii, tt] = a_vals
    M[ii, tt] = ~y_missing.to_numpy()

    def block(cols):
        out = np.zeros((n, T, len(cols)))
        for k, c in enumerate(cols):
            out[ii, tt, k] = to_float(c)
        return out

    Zt = block(schema.baseline)
    X = block(schema.modifiers)
    U = block(schema.prognostic)
    # baseline covariates must be time-invariant
    if Zt.shape[2] and not np.allclose(Zt, Zt[:, :1, :]):
        i, t, k = np.argwhere(~np.isclose(Zt, Zt[:, :1, :]))[0]
        raise DataError(f"baseline column {schema.baseline[k]!r} varies over time for subject {ids[i]!r}")
    Z = Zt[:, 0, :]

    return PanelDataset(
        Y=Y, A=A, Z=Z, X=X, U=U, M=M, ids=ids, times=times,
        z_names=schema.baseline, x_names=schema.modifiers, u_names=schema.prognostic,
        meta={"source": str(path)},
    )


def _parse_floats(series) -> np.ndarray:
    """Exact (round-trip) float parsing; unparseable cells become NaN."""
    text = series.str.strip()
    ok = pd.to_numeric(text, errors="coerce").notna() | text.str.lower().isin(["nan", "inf", "-inf"])
    out = np.full(len(text), np.nan)
    out[ok.to_numpy()] = text[ok].astype(float).to_numpy()
    return out


def _natural_key(s):
    try:
        return (0, float(s), "")
    except ValueError:
        return (1, 0.0, s)


def write_panel_csv(data: PanelDataset, path, schema: Optional[ColumnSchema] = None) -> ColumnSchema:
    """Write ``data`` in long format; returns the schema that reads it back."""
    if schema is None:
        schema = ColumnSchema(baseline=data.z_names, modifiers=data.x_names, prognostic=data.u_names)
    n, T = data.n, data.T
    ii, tt = np.meshgrid(np.arange(n), np.arange(T), indexing="ij")
    ii, tt = ii.ravel(), tt.ravel()
    cols = {
        schema.subject: data.ids[ii],
        schema.time: data.times[tt],
        schema.outcome: [repr(float(v)) if m else schema.missing
                         for v, m in zip(data.Y[ii, tt], data.M[ii, tt])],
        schema.treatment: data.A[ii, tt].astype(int),
    }
    for k, c in enumerate(schema.baseline):
        cols[c] = [repr(float(v)) for v in data.Z[ii, k]]
    for k, c in enumerate(schema.modifiers):
        cols[c] = [repr(float(v)) for v in data.X[ii, tt, k]]
    for k, c in enumerate(schema.prognostic):
        cols[c] = [repr(float(v)) for v in data.U[ii, tt, k]]
    pd.DataFrame(cols).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return schema


@dataclass(frozen=True)
class TimeCounts:
    time: int
    n_treated: int
    n_untreated: int
    flags: tuple


@dataclass(frozen=True)
class ValidationReport:
    threshold: int
    rows: tuple

    @property
    def ok(self):
        return not any(r.flags for r in self.rows)

    @property
    def flags(self):
        return [f for r in self.rows for f in r.flags]

    def flagged_times(self):
        return [r.time for r in self.rows if r.flags]

    def to_json(self, **kwargs):
        return json.dumps(
            [{"time": r.time, "n_treated": r.n_treated, "n_untreated": r.n_untreated,
              "flags": list(r.flags)} for r in self.rows],
            **kwargs,
        )


def validate(data: PanelDataset, threshold: int = 10) -> ValidationReport:
    """Count observed treated/untreated units per time and flag thin cells."""
    obs = data.M
    treated = (obs & (data.A == 1)).sum(axis=0)
    untreated = (obs & (data.A == 0)).sum(axis=0)
    rows = []
    for t in range(data.T):
        flags = []
        for label, count in (("treated", treated[t]), ("untreated", untreated[t])):
            if count == 0:
                flags.append(f"no {label} at t={t + 1}")
            elif count < threshold:
                flags.append(f"{label} count {count} < {threshold} at t={t + 1}")
        rows.append(TimeCounts(t + 1, int(treated[t]), int(untreated[t]), tuple(flags)))
    return ValidationReport(threshold, tuple(rows))
