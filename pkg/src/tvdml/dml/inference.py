"""Confidence intervals, the overall chi-square test, parametric projection and serialization."""
from __future__ import annotations

import json
import warnings as _warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from ..exceptions import EstimationError
from .estimator import COND_LIMIT, TvHteFit

__all__ = [
    "confidence_intervals",
    "hotelling_test",
    "HotellingResult",
    "polynomial_basis",
    "project_parametric",
    "ProjectionResult",
    "fit_to_dict",
    "fit_to_json",
    "effects_frame",
]


def confidence_intervals(fit: TvHteFit, alpha: float = 0.05) -> np.ndarray:
    """Normal intervals ``beta +- z_{1-alpha/2} se``; shape (T, d, 2)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    se = fit.se
    return np.stack([fit.beta - z * se, fit.beta + z * se], axis=-1)


@dataclass(frozen=True)
class HotellingResult:
    statistic: float
    df: int
    p_value: float
    rank: int
    jittered: bool


def _regularized_inverse(S, jitter, what):
    S = 0.5 * (S + S.T)
    jittered = False
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        S = S + jitter * np.eye(S.shape[0])
        jittered = True
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise EstimationError(f"{what} is singular even after {jitter:g} jitter")
    return np.linalg.inv(S), jittered


def hotelling_test(fit: TvHteFit, jitter: float = 1e-8) -> HotellingResult:
    """``n beta' sigma^-1 beta`` against chi-square with ``T*d`` degrees of freedom.

    Sigma has rank at most n, so the statistic is only meaningful when
    ``n`` comfortably exceeds ``T*d``; a warning is issued otherwise.
    """
    b = fit.beta.ravel()
    df = b.size
    if not np.any(b):
        return HotellingResult(0.0, df, 1.0, df, False)
    rank = int(np.linalg.matrix_rank(fit.sigma, hermitian=True))
    if rank < df:
        _warnings.warn(f"sigma has rank {rank} < T*d = {df}; the chi-square approximation is unreliable",
                       RuntimeWarning, stacklevel=2)
    inv, jittered = _regularized_inverse(fit.sigma, jitter, "sigma")
    if jittered:
        _warnings.warn("sigma ill-conditioned; jitter added before inversion", RuntimeWarning, stacklevel=2)
    stat = float(fit.n * b @ inv @ b)
    return HotellingResult(stat, df, float(stats.chi2.sf(stat, df)), rank, jittered)


def polynomial_basis(T: int, degree: int) -> np.ndarray:
    """Columns ``1, rho, ..., rho^degree`` evaluated at ``rho = t/T``, shape (T, degree+1)."""
    rho = np.arange(1, T + 1) / T
    return np.vander(rho, degree + 1, increasing=True)


@dataclass(frozen=True)
class ProjectionResult:
    theta: np.ndarray  # (d, q)
    cov: np.ndarray  # (d*q, d*q), coefficient-major
    se: np.ndarray  # (d, q)
    jittered: bool


def project_parametric(fit: TvHteFit, basis, jitter: float = 1e-8, mode: str = "auto") -> ProjectionResult:
    """GLS fit of ``beta_t^(k) = B(t) theta_k`` using the stacked covariance.

    ``basis`` is a (T, q) matrix shared by all coefficients (or a list of d
    such matrices). Returns ``theta`` with shape (d, q).

    ``mode="joint"`` weights by the full ``(T*d, T*d)`` sigma;
    ``"per-coefficient"`` fits each coefficient with its own ``(T, T)``
    block and ignores cross-coefficient correlation. ``"auto"`` uses the
    joint fit unless sigma is rank deficient (sigma has rank at most n, so
    this happens whenever ``T*d`` approaches n), then falls back with a
    warning.
    """
    if mode not in ("auto", "joint", "per-coefficient"):
        raise ValueError("mode must be 'auto', 'joint' or 'per-coefficient'")
    T, d = fit.T, fit.d
    mats = basis if isinstance(basis, (list, tuple)) else [np.asarray(basis, dtype=float)] * d
    mats = [np.asarray(m, dtype=float).reshape(T, -1) for m in mats]
    if len(mats) != d:
        raise ValueError(f"need one basis per coefficient ({d})")
    for k, m in enumerate(mats):
        if np.linalg.matrix_rank(m) < m.shape[1]:
            raise ValueError(f"basis for coefficient {k} is rank deficient")
    qs = [m.shape[1] for m in mats]
    if mode == "auto":
        rank = int(np.linalg.matrix_rank(fit.sigma, hermitian=True))
        mode = "joint" if rank == T * d else "per-coefficient"
        if mode == "per-coefficient":
            _warnings.warn(f"sigma has rank {rank} < T*d = {T * d}; projecting each coefficient "
                           "with its own covariance block", RuntimeWarning, stacklevel=2)
    if mode == "joint":
        groups = [np.arange(d)]
    else:
        groups = [np.array([k]) for k in range(d)]

    Q = sum(qs)
    offsets = np.concatenate([[0], np.cumsum(qs)])
    theta = np.zeros(Q)
    cov = np.zeros((Q, Q))
    jittered = False
    for ks in groups:
        # rows are stacked time-major (t, k); columns coefficient-major (k, j)
        rows = (np.arange(T)[:, None] * d + ks[None, :]).ravel()
        cols = np.concatenate([np.arange(offsets[k], offsets[k + 1]) for k in ks])
        B = np.zeros((T * len(ks), len(cols)))
        c = 0
        for j, k in enumerate(ks):
            B[j::len(ks), c:c + qs[k]] = mats[k]
            c += qs[k]
        inv, jit = _regularized_inverse(fit.sigma[np.ix_(rows, rows)], jitter, "sigma")
        jittered |= jit
        info = B.T @ inv @ B
        info_inv = np.linalg.inv(0.5 * (info + info.T))
        theta[cols] = info_inv @ B.T @ inv @ fit.beta.ravel()[rows]
        cov[np.ix_(cols, cols)] = info_inv / fit.n
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    if len(set(qs)) == 1:
        theta, se = theta.reshape(d, qs[0]), se.reshape(d, qs[0])
    return ProjectionResult(theta=theta, cov=cov, se=se, jittered=jittered)


def fit_to_dict(fit: TvHteFit, alpha: float = 0.05, hotelling: bool = True) -> dict:
    ci = confidence_intervals(fit, alpha)
    out = {
        "method": fit.method,
        "gamma": fit.gamma,
        "n": fit.n,
        "coefficients": list(fit.coef_names),
        "times": [float(t) if not float(t).is_integer() else int(t) for t in fit.times],
        "alpha": alpha,
        "beta": fit.beta.tolist(),
        "se": fit.se.tolist(),
        "ci": ci.tolist(),
        "n_obs": [int(v) for v in fit.n_obs],
        "rmse": fit.rmse,
        "warnings": list(fit.warnings),
    }
    if hotelling:
        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            try:
                h = hotelling_test(fit)
                out["hotelling"] = {"stat": h.statistic, "df": h.df, "p": h.p_value}
            except EstimationError as exc:
                out["hotelling"] = {"stat": None, "df": fit.beta.size, "p": None, "error": str(exc)}
        out["warnings"] += [str(w.message) for w in caught]
    return out


def fit_to_json(fit: TvHteFit, alpha: float = 0.05, **kwargs) -> str:
    return json.dumps(fit_to_dict(fit, alpha), **kwargs)


def effects_frame(fit: TvHteFit, alpha: float = 0.05) -> pd.DataFrame:
    """Long table ``(t, coefficient, estimate, se, lo, hi)``."""
    ci = confidence_intervals(fit, alpha)
    se = fit.se
    T, d = fit.T, fit.d
    return pd.DataFrame({
        "t": np.repeat(np.arange(1, T + 1), d),
        "coefficient": np.tile(np.array(fit.coef_names, dtype=object), T),
        "estimate": fit.beta.ravel(),
        "se": se.ravel(),
        "lo": ci[..., 0].ravel(),
        "hi": ci[..., 1].ravel(),
    })
