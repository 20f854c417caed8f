"""Numerical check of first-order insensitivity of the mean score to nuisance perturbations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..panel import PanelDataset, design_array


@dataclass(frozen=True)
class ProbeResult:
    derivative: np.ndarray  # (T, d)
    se: np.ndarray  # (T, d)

    @property
    def z(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > 0, self.derivative / self.se, 0.0)

    def within(self, k=3.0):
        """True where ``|derivative| <= k * se``."""
        return np.abs(self.derivative) <= k * self.se


def orthogonality_probe(data: PanelDataset, beta, h, pi, delta_h, delta_pi,
                        rho_grid=(-0.1, -0.05, 0.05, 0.1), centered: bool = True) -> ProbeResult:
    """Central finite-difference derivative at rho = 0 of the mean score along a nuisance path.

    The path is ``h + rho*delta_h``, ``pi + rho*delta_pi``. ``beta`` is (T, d);
    ``h``, ``pi``, ``delta_h``, ``delta_pi`` are (n, T). The grid must hold at
    least one pair ``+-rho``; the derivative averages the central
    differences of all pairs. With ``centered=False`` the treatment factor
    is ``A`` instead of ``A - pi`` (the uncentred score).

    Returns the per-time mean derivative over observed units and its
    standard error from the per-unit spread.
    """
    grid = np.asarray(rho_grid, dtype=float)
    pos = np.unique(grid[grid > 0])
    pairs = [r for r in pos if np.any(np.isclose(grid, -r))]
    if grid.size < 2 or not pairs:
        raise ValueError("rho grid needs at least one symmetric pair +-rho")
    beta = np.asarray(beta, dtype=float)
    h, pi = np.asarray(h, dtype=float), np.asarray(pi, dtype=float)
    dh, dpi = np.asarray(delta_h, dtype=float), np.asarray(delta_pi, dtype=float)
    if centered:
        for r in pairs:
            for s in (r, -r):
                p = pi + s * dpi
                if np.any((p <= 0) | (p >= 1)):
                    raise ValueError(f"perturbed propensity leaves (0, 1) at rho={s:g}")

    Xt = design_array(data)
    A = data.A.astype(float)
    M = data.M
    Y = np.where(M, data.Y, 0.0)
    lin = np.einsum("itk,tk->it", Xt, beta)

    def score(rho):
        resid = Y - A * lin - (h + rho * dh)
        factor = A - (pi + rho * dpi) if centered else A
        return (resid * factor)[:, :, None] * Xt

    per_unit = np.zeros_like(Xt)
    for r in pairs:
        per_unit += (score(r) - score(-r)) / (2.0 * r)
    per_unit /= len(pairs)
    per_unit[~M] = 0.0

    n_t = M.sum(axis=0).astype(float)
    deriv = per_unit.sum(axis=0) / n_t[:, None]
    centered_sq = ((per_unit - deriv[None]) ** 2) * M[:, :, None]
    var = centered_sq.sum(axis=0) / np.maximum(n_t - 1, 1)[:, None]
    se = np.sqrt(var / n_t[:, None])
    return ProbeResult(derivative=deriv, se=se)


def random_perturbation(data: PanelDataset, rng, h_scale: float = 0.5, pi_scale: float = 0.1, pi=None):
    """Bounded random nuisance directions built from the current covariates.

    ``delta_h = h_scale * tanh(c_h + f' w_h)`` and likewise for ``delta_pi``,
    where ``f`` stacks ``Z, X_t, U_t`` and the weights are standard normal.
    Both are functions of the observed history only. When the base
    propensity ``pi`` (n, T) is given, ``delta_pi`` is further multiplied by
    ``pi (1 - pi)`` so that ``pi + rho * delta_pi`` stays in (0, 1) for all
    ``|rho * pi_scale| < 1``.
    """
    n, T = data.n, data.T
    feats = np.concatenate([np.broadcast_to(data.Z[:, None, :], (n, T, data.Z.shape[1])), data.X, data.U],
                           axis=2)
    p = feats.shape[2]
    out = []
    for scale in (h_scale, pi_scale):
        w = rng.standard_normal(p) / np.sqrt(max(p, 1))
        c = rng.standard_normal()
        out.append(scale * np.tanh(c + feats @ w))
    dh, dpi = out
    if pi is not None:
        pi = np.asarray(pi, dtype=float)
        dpi = dpi * pi * (1.0 - pi)
    return dh, dpi
