"""Delay-factor selection by in-sample prediction error."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import EstimationError, TvdmlError
from ..panel import PanelDataset
from .estimator import EstimatorConfig, TvHteFit, _canonical_order, fit_nuisances, fit_sequential


@dataclass
class TuneResult:
    gamma: float
    grid: np.ndarray
    criterion: np.ndarray  # NaN where the fit failed
    failed: np.ndarray
    errors: list
    fit: Optional[TvHteFit] = None

    def rows(self):
        return [(float(g), float(c), bool(f)) for g, c, f in zip(self.grid, self.criterion, self.failed)]


def tune_gamma(data: PanelDataset, config: EstimatorConfig, grid=None, criterion=None,
               inference: bool = True, nuisances=None) -> TuneResult:
    """Pick gamma minimising RMSE (or RMSPE) of ``A beta_t' x~ + h_t`` against observed ``Y``.

    Baseline and propensity fits do not depend on gamma and are shared
    across the grid. Ties go to the smaller gamma. The returned ``fit`` is
    the fit at the selected gamma (with covariance when ``inference``).
    """
    if config.method == "direct-dml":
        raise ValueError("direct-dml has no delay factor to tune")
    grid = np.array(sorted(config.gamma_grid if grid is None else grid), dtype=float)
    if grid.size == 0 or (grid < 0).any() or (grid > 1).any():
        raise ValueError("gamma grid must be non-empty with values in [0, 1]")
    criterion = criterion or config.criterion
    data, _ = _canonical_order(data)
    nuis = fit_nuisances(data, config) if nuisances is None else nuisances
    values = np.full(grid.size, np.nan)
    failed = np.zeros(grid.size, dtype=bool)
    errors = []
    fits = {}
    for k, g in enumerate(grid):
        cfg = config.with_gamma(g)
        try:
            fit = fit_sequential(data, cfg, nuisances=nuis, inference=False)
        except TvdmlError as exc:
            failed[k] = True
            errors.append(f"gamma={g:g}: {exc}")
            continue
        values[k] = fit.rmse if criterion == "rmse" else fit.rmspe
        fits[k] = fit
    if failed.all():
        raise EstimationError("all gamma grid points failed: " + "; ".join(errors))
    best = int(np.nanargmin(values))  # first minimum = smallest gamma on ties
    gamma = float(grid[best])
    if inference:
        fit = fit_sequential(data, config.with_gamma(gamma), nuisances=nuis, inference=True)
    else:
        fit = fits[best]
    return TuneResult(gamma=gamma, grid=grid, criterion=values, failed=failed, errors=errors, fit=fit)
