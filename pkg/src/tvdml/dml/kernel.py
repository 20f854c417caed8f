"""Geometric delay kernel and the delayed-effect offset it induces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..panel import PanelDataset, design_array, tilde_x

GATING_MODES = ("treated-only", "all-days")


@dataclass(frozen=True)
class DecayKernel:
    """Carry-over weight ``gamma ** lag``.

    ``gating="treated-only"`` lets only treated past days contribute;
    ``"all-days"`` drops the treatment indicator (daily-treatment designs).
    """

    gamma: float
    gating: str = "treated-only"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.gating not in GATING_MODES:
            raise ValueError(f"gating must be one of {GATING_MODES}")

    def weight(self, lag):
        lag = np.asarray(lag)
        if np.any(lag < 1):
            raise ValueError("lag must be >= 1")
        return np.power(float(self.gamma), lag)


def delayed_offset(data: PanelDataset, betas, kernel: DecayKernel, i: int, t: int) -> float:
    """``sum_{s<t} gamma^(t-s) [A_is] beta_s' x~_is`` by direct summation.

    ``betas[s-1]`` holds the effect vector for time ``s``; only ``s < t`` are read.
    """
    if t < 1 or t > data.T:
        raise IndexError(f"time {t} outside 1..{data.T}")
    total = 0.0
    for s in range(1, t):
        gate = data.A[i, s - 1] if kernel.gating == "treated-only" else 1.0
        total += kernel.gamma ** (t - s) * gate * float(np.dot(betas[s - 1], tilde_x(data, i, s)))
    return total


def offset_matrix(data: PanelDataset, betas, kernel: DecayKernel, Xt=None) -> np.ndarray:
    """Offsets for every subject and time at once, shape (n, T).

    Uses the recursion ``C_1 = 0``, ``C_t = gamma * (C_{t-1} + G_{t-1} b_{t-1})``
    where ``b_s = beta_s' x~_s`` and ``G`` is the gate.
    """
    if Xt is None:
        Xt = design_array(data)
    betas = np.asarray(betas, dtype=float)
    n, T = data.n, data.T
    out = np.zeros((n, T))
    gate = data.A.astype(float) if kernel.gating == "treated-only" else np.ones((n, T))
    carry = np.zeros(n)
    for t in range(1, T):
        if t - 1 >= len(betas):
            break
        carry = kernel.gamma * (carry + gate[:, t - 1] * (Xt[:, t - 1] @ betas[t - 1]))
        out[:, t] = carry
    return out
