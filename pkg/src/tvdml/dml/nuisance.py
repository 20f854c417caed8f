"""Nuisance fits: baseline outcome g, propensities pi_t and prognostic shifts delta_t."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..exceptions import EstimationError
from ..learners import LearnerSpec, NuisancePredictor, fit_classifier, fit_regressor
from ..panel import PanelDataset
from .kernel import DecayKernel, delayed_offset

__all__ = [
    "NuisanceSet",
    "build_history_features",
    "history_feature_names",
    "fit_baseline_g",
    "fit_propensity",
    "prognostic_features",
    "fit_prognostic_delta_t",
    "h_value",
]


def build_history_features(data: PanelDataset, t: int, t0: int, observed_only: bool = True) -> np.ndarray:
    """Finite-window history features at time ``t``.

    Row layout: ``Z, X_t, U_t`` then, for each lag ``l = 1..t0``, the block
    ``A_{t-l}, X_{t-l}, U_{t-l}, available_l``. Lags reaching before time 1
    are zero-filled with ``available_l = 0``. Rows are the subjects observed
    at ``t`` unless ``observed_only`` is False.
    """
    if t < 1 or t > data.T:
        raise IndexError(f"time {t} outside 1..{data.T}")
    if t0 < 0:
        raise ValueError("lag window must be >= 0")
    rows = np.flatnonzero(data.M[:, t - 1]) if observed_only else np.arange(data.n)
    dx, du = data.X.shape[2], data.U.shape[2]
    blocks = [data.Z[rows], data.X[rows, t - 1], data.U[rows, t - 1]]
    for lag in range(1, t0 + 1):
        s = t - lag
        lag_block = np.zeros((len(rows), 2 + dx + du))
        if s >= 1:
            lag_block[:, 0] = data.A[rows, s - 1]
            lag_block[:, 1:1 + dx] = data.X[rows, s - 1]
            lag_block[:, 1 + dx:1 + dx + du] = data.U[rows, s - 1]
            lag_block[:, -1] = 1.0
        blocks.append(lag_block)
    return np.column_stack(blocks) if blocks else np.empty((len(rows), 0))


def history_feature_names(data: PanelDataset, t0: int):
    names = [*data.z_names, *data.x_names, *data.u_names]
    for lag in range(1, t0 + 1):
        names += [f"a_lag{lag}", *(f"{c}_lag{lag}" for c in data.x_names),
                  *(f"{c}_lag{lag}" for c in data.u_names), f"avail_lag{lag}"]
    return names


def prognostic_features(data: PanelDataset, t: int, rows=None) -> np.ndarray:
    """``(U_t, X_t)`` rows for the prognostic-shift learner."""
    rows = np.arange(data.n) if rows is None else rows
    return np.column_stack([data.U[rows, t - 1], data.X[rows, t - 1]])


@dataclass
class NuisanceSet:
    """Fitted ``g``, per-time ``pi_t`` and ``delta_t`` (``delta[0]`` is None: delta_1 = 0)."""

    g: Optional[NuisancePredictor]
    pi: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    lag_window: int = 0
    warnings: list = field(default_factory=list)


def fit_baseline_g(data: PanelDataset, spec: LearnerSpec) -> NuisancePredictor:
    """Regress ``Y_1`` on ``Z`` over observed untreated subjects at time 1."""
    rows = data.M[:, 0] & (data.A[:, 0] == 0)
    if not rows.any():
        raise EstimationError("no untreated at baseline (t=1): cannot fit the baseline outcome", time=1)
    return fit_regressor(spec, data.Z[rows], data.Y[rows, 0])


def fit_propensity(data: PanelDataset, spec: LearnerSpec, t0: int = 0, times=None):
    """Per-time classifiers of ``A_t`` on history features over observed units.

    Returns a list indexed by ``t - 1``. Degenerate classes give a constant
    clipped predictor whose ``warning`` attribute is set.
    """
    times = range(1, data.T + 1) if times is None else times
    out = []
    for t in times:
        rows = data.M[:, t - 1]
        F = build_history_features(data, t, t0)
        if F.shape[0] == 0:
            raise EstimationError(f"no observed units at time {t}", time=t)
        out.append(fit_classifier(spec, F, data.A[rows, t - 1]))
    return out


def fit_prognostic_delta_t(data, t, g, betas, kernel: DecayKernel, spec: LearnerSpec,
                           min_count: int = 1, offsets=None) -> NuisancePredictor:
    """Fit ``delta_t`` to ``Y_t - g(Z) - offset_t`` on ``(U_t, X_t)`` over observed untreated units.

    ``offsets`` (length n) may be supplied to skip the direct summation.
    """
    if t < 2:
        raise ValueError("delta_t is only fitted for t >= 2")
    rows = np.flatnonzero(data.M[:, t - 1] & (data.A[:, t - 1] == 0))
    if len(rows) == 0:
        raise EstimationError(f"no untreated at time t={t}", time=t)
    if len(rows) < min_count:
        raise EstimationError(f"only {len(rows)} observed untreated units at time t={t} "
                              f"(minimum {min_count})", time=t)
    if offsets is None:
        off = np.array([delayed_offset(data, betas, kernel, i, t) for i in rows])
    else:
        off = np.asarray(offsets)[rows]
    resid = data.Y[rows, t - 1] - g.predict(data.Z[rows]) - off
    return fit_regressor(spec, prognostic_features(data, t, rows), resid)


def h_value(data: PanelDataset, i: int, t: int, g, delta_t, betas, kernel: DecayKernel) -> float:
    """``g(Z_i) + 1{t>1} (offset_it + delta_t(U_it, X_it))``."""
    base = float(g.predict(data.Z[i:i + 1])[0])
    if t == 1:
        return base
    extra = delayed_offset(data, betas, kernel, i, t)
    if delta_t is not None:
        extra += float(delta_t.predict(prognostic_features(data, t, np.array([i])))[0])
    return base + extra
