"""Sequential two-step DML estimation of time-varying effects."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from ..exceptions import ConfigError, EstimationError
from ..learners import LearnerSpec, fit_regressor
from ..panel import PanelDataset, design_array, tilde_x, validate
from .kernel import GATING_MODES, DecayKernel
from .nuisance import (
    NuisanceSet,
    build_history_features,
    fit_baseline_g,
    fit_propensity,
    prognostic_features,
)

log = logging.getLogger(__name__)

__all__ = [
    "EstimatorConfig",
    "TvHteFit",
    "solve_moment",
    "solve_beta_t",
    "score_S_t",
    "estimate_covariance",
    "fit_nuisances",
    "fit_sequential",
]

METHODS = ("proposed", "no-dml", "direct-dml")
GAMMA_GRID = tuple(round(0.1 * k, 1) for k in range(11))
COND_LIMIT = 1e12


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator settings.

    ``tune=True`` selects gamma over ``gamma_grid`` (see ``tune_gamma``);
    otherwise ``gamma`` is used as given. ``lag_window`` is the history
    window of the propensity model (and of the direct-dml outcome model).
    """

    method: str = "proposed"
    gamma: float = 0.0
    tune: bool = False
    gamma_grid: tuple = GAMMA_GRID
    criterion: str = "rmse"
    gating: str = "treated-only"
    g_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("ridge-linear"))
    pi_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("logistic"))
    delta_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("ridge-linear"))
    h_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("ridge-linear"))
    lag_window: int = 0
    min_cell_count: int = 10
    jitter: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not self.gamma_grid or any(not 0.0 <= g <= 1.0 for g in self.gamma_grid):
            raise ConfigError("gamma grid must be non-empty with values in [0, 1]")
        if self.gating not in GATING_MODES:
            raise ConfigError(f"gating must be one of {GATING_MODES}")
        if self.lag_window < 0:
            raise ConfigError("lag_window must be >= 0")
        if self.criterion not in ("rmse", "rmspe"):
            raise ConfigError("criterion must be 'rmse' or 'rmspe'")
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        for name in ("g_learner", "pi_learner", "delta_learner", "h_learner"):
            val = getattr(self, name)
            if isinstance(val, dict):
                object.__setattr__(self, name, LearnerSpec(**val))
        if not self.pi_learner.is_classifier:
            raise ConfigError("pi_learner must be a classifier")
        for name in ("g_learner", "delta_learner", "h_learner"):
            if getattr(self, name).is_classifier:
                raise ConfigError(f"{name} must be a regressor")

    @property
    def kernel(self):
        return DecayKernel(self.gamma, self.gating)

    def with_gamma(self, gamma):
        return replace(self, gamma=float(gamma), tune=False)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TvHteFit:
    """Per-time effect estimates with their sandwich covariance.

    ``sigma`` is the (T*d, T*d) covariance of ``sqrt(n) (beta_hat - beta)``
    stacked time-major; ``omega[t, s]`` holds the score cross-moment for
    times ``t+1, s+1`` averaged over subjects observed at both.
    """

    method: str
    gamma: Optional[float]
    beta: np.ndarray
    J: np.ndarray
    rhs: np.ndarray
    n: int
    n_obs: np.ndarray
    coef_names: tuple
    times: np.ndarray
    omega: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    pair_counts: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None
    h_hat: Optional[np.ndarray] = None
    pi_hat: Optional[np.ndarray] = None
    fitted: Optional[np.ndarray] = None
    rmse: float = float("nan")
    rmspe: float = float("nan")
    warnings: list = field(default_factory=list)

    @property
    def T(self):
        return self.beta.shape[0]

    @property
    def d(self):
        return self.beta.shape[1]

    def sigma_block(self, t, s=None):
        s = t if s is None else s
        d = self.d
        return self.sigma[(t - 1) * d:t * d, (s - 1) * d:s * d]

    @property
    def se(self):
        """Standard errors, shape (T, d)."""
        if self.sigma is None:
            raise EstimationError("covariance was not computed for this fit")
        diag = np.diag(self.sigma).reshape(self.T, self.d)
        return np.sqrt(np.maximum(diag, 0.0) / self.n)


# ---------------------------------------------------------------- Step 2

def solve_moment(A, V, R, Xt, jitter=1e-8):
    """Solve ``mean(A V x x') beta = mean(R V x)`` over the supplied rows.

    Returns ``(beta, J, rhs, warning)``; ``J`` is symmetrised and jittered
    when its condition number exceeds 1e12.
    """
    m, d = Xt.shape
    if m < d:
        raise EstimationError(f"only {m} observed units for {d} effect coefficients")
    w = A * V
    J = (Xt * w[:, None]).T @ Xt / m
    J = 0.5 * (J + J.T)
    rhs = Xt.T @ (R * V) / m
    warning = None
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        J = J + jitter * np.eye(d)
        warning = f"ill-conditioned J (cond={cond:.3g}); added {jitter:g} jitter"
    try:
        beta = np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"singular J after jitter: {exc}") from exc
    return beta, J, rhs, warning


def solve_beta_t(data: PanelDataset, t: int, h_values, pi_values, centered: bool = True, jitter=1e-8):
    """Effect vector at time ``t`` from the centred estimating equation.

    ``h_values`` and ``pi_values`` are per observed unit at ``t`` (in row
    order) or full length-n arrays. Returns ``(beta_t, J_t, rhs)``.
    """
    rows = np.flatnonzero(data.M[:, t - 1])
    h = _restrict(h_values, rows, data.n)
    A = data.A[rows, t - 1].astype(float)
    if centered:
        V = A - _restrict(pi_values, rows, data.n)
    else:
        V = A
    Xt = np.column_stack([np.ones(len(rows)), data.Z[rows], data.X[rows, t - 1]])
    R = data.Y[rows, t - 1] - h
    beta, J, rhs, _ = solve_moment(A, V, R, Xt, jitter)
    return beta, J, rhs


def _restrict(vals, rows, n):
    vals = np.asarray(vals, dtype=float)
    if vals.shape[0] == n:
        return vals[rows]
    if vals.shape[0] == len(rows):
        return vals
    raise ValueError("nuisance values must be per observed unit or per subject")


def score_S_t(data: PanelDataset, i: int, t: int, beta_t, h_it: float, pi_it: float) -> np.ndarray:
    """``(Y - A beta' x~ - h)(A - pi) x~`` for one observed unit."""
    if not data.M[i, t - 1]:
        raise ValueError(f"subject {i} is not observed at time {t}")
    x = tilde_x(data, i, t)
    a = float(data.A[i, t - 1])
    resid = data.Y[i, t - 1] - a * float(np.dot(beta_t, x)) - h_it
    return resid * (a - pi_it) * x


# ---------------------------------------------------------------- covariance

def estimate_covariance(scores, M, J, n=None):
    """Score cross-moments and stacked sandwich covariance.

    scores : (n, T, d) per-unit scores, zero where unobserved
    M : (n, T) observation mask
    J : (T, d, d)

    ``omega[t, s]`` averages ``S_t S_s'`` over the ``pair_counts[t, s]``
    subjects observed at both times. The sigma block ``(t, s)`` is
    ``J_t^-1 omega_ts J_s^-1 * n * n_ts / (n_t n_s)``, the covariance of
    ``sqrt(n)(beta_hat - beta)`` when time ``t`` is estimated from its
    ``n_t`` observed units; without missing outcomes it reduces to
    ``J_t^-1 omega_ts J_s^-1``.

    Returns ``(omega, sigma, pair_counts, warnings)``.
    """
    scores = np.asarray(scores, dtype=float)
    nsub, T, d = scores.shape
    n = nsub if n is None else n
    Mf = np.asarray(M, dtype=float)
    warnings = []
    pair = Mf.T @ Mf
    flat = scores.reshape(nsub, T * d)
    raw = (flat.T @ flat).reshape(T, d, T, d).transpose(0, 2, 1, 3)
    with np.errstate(invalid="ignore", divide="ignore"):
        omega = np.where(pair[:, :, None, None] > 0, raw / pair[:, :, None, None], 0.0)
    if (pair == 0).any():
        t, s = np.argwhere(pair == 0)[0]
        warnings.append(f"no subject observed at both t={t + 1} and t={s + 1}; "
                        f"{int((pair == 0).sum())} covariance blocks set to 0")
    n_t = np.diag(pair)
    Jinv = np.linalg.inv(J)
    scale = np.where(n_t > 0, np.sqrt(n) / np.where(n_t > 0, n_t, 1.0), 0.0)
    scaled = np.einsum("tkl,itl->itk", Jinv, scores) * scale[None, :, None]
    sflat = scaled.reshape(nsub, T * d)
    sigma = sflat.T @ sflat
    sigma = 0.5 * (sigma + sigma.T)
    evals, evecs = np.linalg.eigh(sigma)
    if evals.min() < 0:
        if evals.min() < -1e-8 * max(1.0, evals.max()):
            warnings.append(f"sigma had negative eigenvalue {evals.min():.3g}; floored at 0")
        sigma = (evecs * np.maximum(evals, 0.0)) @ evecs.T
        sigma = 0.5 * (sigma + sigma.T)
    return omega, sigma, pair, warnings


# ---------------------------------------------------------------- driver

def _canonical_order(data):
    ids = data.ids
    try:
        order = np.argsort(ids, kind="stable")
    except TypeError:
        order = np.argsort(ids.astype(str), kind="stable")
    if np.array_equal(order, np.arange(data.n)):
        return data, None
    return data.take(order), order


def fit_nuisances(data: PanelDataset, config: EstimatorConfig) -> NuisanceSet:
    """Baseline and propensity fits (both independent of gamma)."""
    warnings = []
    g = None
    if config.method in ("proposed", "no-dml"):
        g = fit_baseline_g(data, config.g_learner)
    pis = []
    if config.method in ("proposed", "direct-dml"):
        pis = fit_propensity(data, config.pi_learner, config.lag_window)
        for t, p in enumerate(pis, start=1):
            if p.warning:
                warnings.append(f"t={t}: propensity {p.warning}")
    return NuisanceSet(g=g, pi=pis, delta=[], lag_window=config.lag_window, warnings=warnings)


def _check_cells(data, config):
    report = validate(data, config.min_cell_count)
    warnings = []
    for row in report.rows:
        if row.n_treated == 0 or row.n_untreated == 0:
            which = "treated" if row.n_treated == 0 else "untreated"
            raise EstimationError(
                f"no {which} observed units at time t={row.time}; the effect at this time is not "
                f"identified (drop the time point or pool it with a neighbour)", time=row.time)
        warnings.extend(row.flags)
    return warnings


def fit_sequential(data: PanelDataset, config: EstimatorConfig, nuisances: Optional[NuisanceSet] = None,
                   inference: bool = True) -> TvHteFit:
    """Run the two-step procedure over t = 1..T.

    With ``config.tune`` set, gamma is first chosen by ``tune_gamma`` and the
    returned fit is the one at the selected gamma. ``inference=False`` skips
    the covariance (used inside gamma tuning).
    """
    if config.tune and config.method != "direct-dml":
        from .tuning import tune_gamma
        return tune_gamma(data, config).fit

    data, order = _canonical_order(data)
    warnings = _check_cells(data, config)
    if nuisances is None:
        nuisances = fit_nuisances(data, config)
    warnings = warnings + list(nuisances.warnings)

    n, T, d = data.n, data.T, data.d
    Xt_all = design_array(data)
    M = data.M
    A = data.A.astype(float)
    Y = np.where(M, data.Y, 0.0)
    kernel = config.kernel
    gate = A if kernel.gating == "treated-only" else np.ones((n, T))
    gZ = nuisances.g.predict(data.Z) if nuisances.g is not None else None

    beta = np.zeros((T, d))
    J = np.zeros((T, d, d))
    rhs = np.zeros((T, d))
    scores = np.zeros((n, T, d))
    h_hat = np.full((n, T), np.nan)
    pi_hat = np.full((n, T), np.nan)
    fitted = np.full((n, T), np.nan)
    n_obs = M.sum(axis=0)
    carry = np.zeros(n)
    deltas = [None]

    for t in range(1, T + 1):
        c = t - 1
        rows = np.flatnonzero(M[:, c])
        try:
            if t > 1 and config.method != "direct-dml":
                carry = kernel.gamma * (carry + gate[:, c - 1] * (Xt_all[:, c - 1] @ beta[c - 1]))
            if config.method == "direct-dml":
                untreated = M[:, c] & (data.A[:, c] == 0)
                if untreated.sum() < max(config.min_cell_count, 1):
                    raise EstimationError(f"only {int(untreated.sum())} observed untreated units at "
                                          f"time t={t}", time=t)
                F_obs = build_history_features(data, t, config.lag_window)
                F_unt = F_obs[untreated[rows]]
                h_model = fit_regressor(config.h_learner, F_unt, Y[untreated, c])
                h_rows = h_model.predict(F_obs)
            elif t == 1:
                h_rows = gZ[rows]
            else:
                untreated = np.flatnonzero(M[:, c] & (data.A[:, c] == 0))
                if len(untreated) < max(config.min_cell_count, 1):
                    raise EstimationError(f"only {len(untreated)} observed untreated units at "
                                          f"time t={t}", time=t)
                resid = Y[untreated, c] - gZ[untreated] - carry[untreated]
                delta = fit_regressor(config.delta_learner, prognostic_features(data, t, untreated), resid)
                deltas.append(delta)
                h_rows = gZ[rows] + carry[rows] + delta.predict(prognostic_features(data, t, rows))

            a = A[rows, c]
            if config.method == "no-dml":
                V = a
            else:
                p = nuisances.pi[c].predict(build_history_features(data, t, config.lag_window))
                pi_hat[rows, c] = p
                V = a - p
            x = Xt_all[rows, c]
            R = Y[rows, c] - h_rows
            b, Jt, r, warn = solve_moment(a, V, R, x, config.jitter)
        except EstimationError as exc:
            if exc.time is None:
                raise EstimationError(f"t={t}: {exc}", time=t) from exc
            raise
        if warn:
            warnings.append(f"t={t}: {warn}")
        beta[c], J[c], rhs[c] = b, Jt, r
        h_hat[rows, c] = h_rows
        lin = x @ b
        fitted[rows, c] = a * lin + h_rows
        scores[rows, c] = ((R - a * lin) * V)[:, None] * x

    resid = (data.Y - fitted)[M]
    rmse = float(np.sqrt(np.mean(resid ** 2))) if resid.size else float("nan")
    fit = TvHteFit(
        method=config.method,
        gamma=None if config.method == "direct-dml" else float(config.gamma),
        beta=beta, J=J, rhs=rhs, n=n, n_obs=n_obs, coef_names=data.coef_names,
        times=np.asarray(data.times), scores=scores, h_hat=h_hat, pi_hat=pi_hat,
        fitted=fitted, rmse=rmse, warnings=warnings,
    )
    if config.criterion == "rmspe":
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = resid / data.Y[M]
        fit.rmspe = float(np.sqrt(np.nanmean(rel[np.isfinite(rel)] ** 2)))
    if inference:
        omega, sigma, pair, cov_warn = estimate_covariance(scores, M, J, n)
        fit.omega, fit.sigma, fit.pair_counts = omega, sigma, pair
        fit.warnings.extend(cov_warn)
    if order is not None:
        inv = np.argsort(order)
        for name in ("scores", "h_hat", "pi_hat", "fitted"):
            setattr(fit, name, getattr(fit, name)[inv])
    return fit
