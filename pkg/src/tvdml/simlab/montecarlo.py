"""Monte Carlo replication across estimators and Table-style metric aggregation."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from ..dml import EstimatorConfig, fit_nuisances, fit_sequential, tune_gamma
from ..exceptions import TvdmlError
from ..learners import LearnerSpec
from .dgp import ScenarioSpec, replicate_rng, simulate, true_beta

log = logging.getLogger(__name__)

__all__ = [
    "MC_METHODS",
    "method_config",
    "MetricsTable",
    "compute_metrics",
    "MonteCarloResult",
    "run_replicate",
    "run_monte_carlo",
]

MC_METHODS = ("proposed-known", "proposed-tuned", "direct-dml-2", "direct-dml-5", "no-dml")
COEF_NAMES = ("intercept", "z1", "z2", "x1", "x2")


def case_learners(case):
    """Linear nuisances for Case I, CART everywhere for Case II."""
    if case == "I":
        return dict(g_learner=LearnerSpec("ridge-linear"), pi_learner=LearnerSpec("logistic"),
                    delta_learner=LearnerSpec("ridge-linear"), h_learner=LearnerSpec("ridge-linear"))
    return dict(g_learner=LearnerSpec("tree-regressor"), pi_learner=LearnerSpec("tree-classifier"),
                delta_learner=LearnerSpec("tree-regressor"), h_learner=LearnerSpec("tree-regressor"))


def method_config(method: str, scenario: ScenarioSpec, **overrides) -> EstimatorConfig:
    """Estimator configuration for a named Monte Carlo method."""
    kw = dict(case_learners(scenario.case), gating=scenario.gating)
    if method == "proposed-known":
        kw.update(method="proposed", gamma=scenario.gamma)
    elif method == "proposed-tuned":
        kw.update(method="proposed", tune=True)
    elif method.startswith("direct-dml-"):
        kw.update(method="direct-dml", lag_window=int(method.rsplit("-", 1)[1]))
    elif method == "no-dml":
        kw.update(method="no-dml", gamma=scenario.gamma)
    else:
        raise ValueError(f"unknown Monte Carlo method {method!r}")
    kw.update(overrides)
    return EstimatorConfig(**kw)


@dataclass
class MetricsTable:
    """Per (method, coefficient): bias, sd, se (raw units) and cp (percent)."""

    frame: pd.DataFrame

    def display(self):
        """Paper-style scaling: bias x1e-3, SD/SE x1e-2, CP in %."""
        out = self.frame.copy()
        out["bias"] = out["bias"] * 1e3
        out["sd"] = out["sd"] * 1e2
        out["se"] = out["se"] * 1e2
        return out.rename(columns={"bias": "bias_e-3", "sd": "sd_e-2", "se": "se_e-2", "cp": "cp_pct"})

    def to_csv(self, path, scaled=True):
        (self.display() if scaled else self.frame).to_csv(path, index=False, na_rep="NA",
                                                          float_format="%.4f", lineterminator="\n")

    def row(self, method, coefficient):
        f = self.frame
        hit = f[(f["method"] == method) & (f["coefficient"] == coefficient)]
        if hit.empty:
            raise KeyError((method, coefficient))
        return hit.iloc[0]

    def method_mean(self, method, column):
        f = self.frame
        return float(f.loc[f["method"] == method, column].mean())


def compute_metrics(estimates, ses, truth, alpha=0.05, method="", coef_names=COEF_NAMES) -> MetricsTable:
    """Bias / MC SD / mean SE / coverage per coefficient.

    estimates, ses : (reps, T, d); truth : (T, d). Bias is averaged over
    replicates and time; SD is the replicate SD (ddof=1) averaged over time
    (NaN with a single replicate); coverage uses normal intervals.
    """
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != se.shape or est.ndim != 3 or est.shape[1:] != truth.shape:
        raise ValueError("estimates, ses must be (reps, T, d) and truth (T, d)")
    reps = est.shape[0]
    z = stats.norm.ppf(1 - alpha / 2)
    err = est - truth[None]
    bias = err.mean(axis=(0, 1))
    sd = est.std(axis=0, ddof=1).mean(axis=0) if reps > 1 else np.full(est.shape[2], np.nan)
    mean_se = se.mean(axis=(0, 1))
    cp = 100.0 * (np.abs(err) <= z * se).mean(axis=(0, 1))
    names = list(coef_names)[:est.shape[2]]
    frame = pd.DataFrame({"method": method, "coefficient": names, "bias": bias, "sd": sd,
                          "se": mean_se, "cp": cp, "reps": reps})
    return MetricsTable(frame)


@dataclass
class MonteCarloResult:
    scenario: ScenarioSpec
    metrics: MetricsTable
    raw: pd.DataFrame
    estimates: dict
    ses: dict
    gammas: dict
    failures: dict = field(default_factory=dict)

    def failure_counts(self):
        return {m: len(v) for m, v in self.failures.items()}


def run_replicate(scenario: ScenarioSpec, replicate: int, methods=MC_METHODS, base_seed=None,
                  alpha=0.05, config_overrides=None):
    """Fit every method on one simulated dataset.

    Returns ``{method: dict(beta, se, gamma) or dict(error=message)}``.
    """
    base = scenario.seed if base_seed is None else base_seed
    rng = replicate_rng(base, replicate)
    data, _ = simulate(scenario, rng)
    overrides = config_overrides or {}
    out = {}
    shared = {}
    for method in methods:
        cfg = method_config(method, scenario, **overrides.get(method, {}))
        try:
            if cfg.method == "proposed":
                # baseline and propensity fits are shared by known and tuned gamma
                if "proposed" not in shared:
                    shared["proposed"] = fit_nuisances(data, cfg)
                nuis = shared["proposed"]
                if cfg.tune:
                    res = tune_gamma(data, cfg, nuisances=nuis)
                    fit = res.fit
                else:
                    fit = fit_sequential(data, cfg, nuisances=nuis)
            else:
                fit = fit_sequential(data, cfg)
            out[method] = {"beta": fit.beta, "se": fit.se, "gamma": fit.gamma}
        except TvdmlError as exc:
            out[method] = {"error": str(exc)}
    return out


def _replicate_task(args):
    scenario, r, methods, base, alpha, overrides = args
    return r, run_replicate(scenario, r, methods, base, alpha, overrides)


def run_monte_carlo(scenario: ScenarioSpec, reps: int, methods=MC_METHODS, base_seed=None,
                    alpha=0.05, jobs=1, config_overrides=None, progress=None) -> MonteCarloResult:
    """Replicate ``scenario`` ``reps`` times and aggregate metrics per method.

    Replicate ``r`` draws from a stream derived from ``(base_seed, r)``, so
    serial and parallel runs agree. Failed fits are excluded from the
    metrics and listed in ``failures``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    base = scenario.seed if base_seed is None else base_seed
    tasks = [(scenario, r, tuple(methods), base, alpha, config_overrides) for r in range(reps)]
    results = {}
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for r, res in pool.map(_replicate_task, tasks):
                results[r] = res
                if progress:
                    progress(r)
    else:
        for task in tasks:
            r, res = _replicate_task(task)
            results[r] = res
            if progress:
                progress(r)

    truth = true_beta(scenario.T, scenario.effect_scale)
    T, d = truth.shape
    z = stats.norm.ppf(1 - alpha / 2)
    tables, raw_rows = [], []
    estimates, ses, gammas, failures = {}, {}, {}, {}
    for method in methods:
        ok = [r for r in range(reps) if "error" not in results[r][method]]
        failures[method] = [(r, results[r][method]["error"]) for r in range(reps) if r not in ok]
        if not ok:
            continue
        est = np.stack([results[r][method]["beta"] for r in ok])
        se = np.stack([results[r][method]["se"] for r in ok])
        estimates[method], ses[method] = est, se
        gammas[method] = np.array([np.nan if results[r][method]["gamma"] is None else results[r][method]["gamma"]
                                   for r in ok])
        table = compute_metrics(est, se, truth, alpha, method)
        table.frame["failed"] = len(failures[method])
        tables.append(table.frame)
        covered = np.abs(est - truth[None]) <= z * se
        raw_rows.append(pd.DataFrame({
            "replicate": np.repeat(ok, T * d),
            "method": method,
            "t": np.tile(np.repeat(np.arange(1, T + 1), d), len(ok)),
            "coefficient": np.tile(np.array(COEF_NAMES, dtype=object), len(ok) * T),
            "estimate": est.ravel(),
            "se": se.ravel(),
            "covered": covered.ravel().astype(int),
        }))
    metrics = MetricsTable(pd.concat(tables, ignore_index=True) if tables else
                           pd.DataFrame(columns=["method", "coefficient", "bias", "sd", "se", "cp", "reps", "failed"]))
    raw = pd.concat(raw_rows, ignore_index=True) if raw_rows else pd.DataFrame()
    return MonteCarloResult(scenario, metrics, raw, estimates, ses, gammas, failures)
