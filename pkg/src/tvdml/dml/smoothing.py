"""Loess-style local linear smoothing of effect curves (display only)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class SmoothResult:
    times: np.ndarray
    curve: np.ndarray  # (T, d)
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    span: float


def loess_matrix(x, span):
    """Hat matrix of tricube-weighted local linear regression.

    Each target uses its ``q = floor(span * T)`` nearest points; the
    neighbourhood radius is the distance to the q-th of them (enlarged by
    ``span`` when ``span > 1`` as in loess), so that point itself gets
    zero weight.
    """
    x = np.asarray(x, dtype=float)
    T = x.size
    if not 0.0 < span:
        raise ValueError("span must be positive")
    q = int(np.floor(min(span, 1.0) * T))
    if q < 3:
        raise ValueError(f"span {span} keeps only {q} points per window; need at least 3")
    L = np.zeros((T, T))
    for j, x0 in enumerate(x):
        dist = np.abs(x - x0)
        radius = np.sort(dist)[q - 1] * max(span, 1.0)
        if radius == 0:
            radius = 1.0
        u = np.clip(dist / radius, 0.0, 1.0)
        w = (1.0 - u ** 3) ** 3
        G = np.column_stack([np.ones(T), x - x0])
        WG = G * w[:, None]
        A = G.T @ WG
        L[j] = np.linalg.solve(A, WG.T)[0]
    return L


def smooth_effects(fit_or_beta, span: float = 0.75, alpha: float = 0.05, times=None) -> SmoothResult:
    """Smooth each coefficient's curve over t and attach pointwise normal bands.

    The band uses ``sigma * ||l(t)||`` with ``sigma^2 = RSS / (T - tr(L))``.
    """
    beta = getattr(fit_or_beta, "beta", fit_or_beta)
    beta = np.asarray(beta, dtype=float)
    if beta.ndim == 1:
        beta = beta[:, None]
    if not 0.0 < span <= 1.0:
        raise ValueError("span must lie in (0, 1]")
    T = beta.shape[0]
    x = np.arange(1, T + 1, dtype=float) if times is None else np.asarray(times, dtype=float)
    L = loess_matrix(x, span)
    curve = L @ beta
    resid = beta - curve
    dof = T - np.trace(L)
    sigma = np.sqrt((resid ** 2).sum(axis=0) / dof) if dof > 0 else np.full(beta.shape[1], np.nan)
    lnorm = np.sqrt((L ** 2).sum(axis=1))
    se = lnorm[:, None] * sigma[None, :]
    z = stats.norm.ppf(1 - alpha / 2)
    return SmoothResult(times=x, curve=curve, se=se, lower=curve - z * se, upper=curve + z * se, span=span)
