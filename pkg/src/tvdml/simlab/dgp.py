"""Case I / Case II panel generators with known time-varying effects."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from ..panel import PanelDataset

__all__ = [
    "FpcSpec",
    "ScenarioSpec",
    "TruthRecord",
    "true_beta",
    "gen_fpc_covariate",
    "gen_case1",
    "gen_case2",
    "generate",
    "apply_missingness",
    "simulate",
    "replicate_rng",
    "structural_outcome",
]


@dataclass(frozen=True)
class FpcSpec:
    """Cosine-basis functional covariate: ``sqrt(2) sum_k xi_k sqrt(nu_k) cos(k pi t/T) + eps``."""

    K: int = 30
    nu_scale: float = 0.3
    nu_decay: float = 8.0
    sigma_eps: float = 0.75

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.nu_scale <= 0 or self.nu_decay <= 0:
            raise ValueError("eigenvalues must be positive")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be >= 0")

    @property
    def nu(self):
        k = np.arange(1, self.K + 1)
        return self.nu_scale * np.exp(-k / self.nu_decay)

    def basis(self, T):
        """(T, K) matrix ``cos(k pi t / T)``."""
        rho = np.arange(1, T + 1) / T
        k = np.arange(1, self.K + 1)
        return np.cos(np.pi * np.outer(rho, k))

    def variance(self, T):
        """Marginal variance at each t: ``2 sum_k nu_k cos^2(k pi t/T) + sigma_eps^2``."""
        return 2.0 * (self.basis(T) ** 2) @ self.nu + self.sigma_eps ** 2


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation design.

    ``effect_scale`` multiplies the true effect curves (0 gives a null
    design). ``g_noise`` chooses whether the baseline-outcome noise is
    redrawn per observation (default) or once per subject.
    """

    case: str = "I"
    n: int = 500
    T: int = 100
    gamma: float = 0.3
    missing_prob: float = 0.3
    R: Optional[int] = None
    seed: int = 0
    effect_scale: float = 1.0
    g_noise: str = "observation"
    gating: str = "treated-only"
    fpc: FpcSpec = field(default_factory=FpcSpec)

    def __post_init__(self):
        if self.case not in ("I", "II"):
            raise ValueError("case must be 'I' or 'II'")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.missing_prob < 1.0:
            raise ValueError("missing_prob must lie in [0, 1)")
        if self.g_noise not in ("observation", "subject"):
            raise ValueError("g_noise must be 'observation' or 'subject'")
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be positive")
        if self.R is None:
            object.__setattr__(self, "R", 8 if self.case == "I" else 2)
        if self.case == "I" and self.R < 2 or self.case == "II" and self.R < 1:
            raise ValueError("too few prognostic factors for this case")
        if isinstance(self.fpc, dict):
            object.__setattr__(self, "fpc", FpcSpec(**self.fpc))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class TruthRecord:
    """Data-generating truth for oracle checks.

    ``h0`` is the noise-free treatment-free outcome mean
    ``g0(Z) + offset + delta0_t`` and ``noise`` the realised disturbance.
    """

    beta: np.ndarray  # (T, d)
    gamma: float
    pi: np.ndarray  # (n, T)
    delta: np.ndarray  # (n, T) noise-free, zero at t = 1
    g: np.ndarray  # (n,) noise-free
    h0: np.ndarray  # (n, T)
    noise: np.ndarray  # (n, T)

    def to_dict(self):
        return {"gamma": self.gamma, "beta": self.beta.tolist()}


def true_beta(T: int, effect_scale: float = 1.0) -> np.ndarray:
    """Columns: intercept, Z1, Z2, X1, X2 at ``rho = t/T``."""
    rho = np.arange(1, T + 1) / T
    beta = np.column_stack([
        -0.3 * (1.0 - rho / 2.0),
        np.full(T, 0.05),
        np.full(T, -0.05),
        0.05 + 0.1 * rho ** 2,
        -0.05 - 0.1 * rho ** 2,
    ])
    return effect_scale * beta


def gen_fpc_covariate(spec: FpcSpec, T: int, rng, size=None) -> np.ndarray:
    """One series of length T (or ``size`` independent series, shape ``(*size, T)``)."""
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    xi = rng.standard_normal(shape + (spec.K,))
    smooth = np.sqrt(2.0) * (xi * np.sqrt(spec.nu)) @ spec.basis(T).T
    return smooth + spec.sigma_eps * rng.standard_normal(shape + (T,))


def replicate_rng(base_seed: int, replicate: int):
    """Independent stream for replicate ``r`` derived from ``(base_seed, r)``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(replicate),)))


def structural_outcome(A, Xt, beta, gamma, g_part, delta_part, gating="treated-only"):
    """Outcome ``g + sum_{s<t} gamma^(t-s) [A_s] beta_s'x_s + A_t beta_t'x_t + delta_t``.

    Also returns the delayed offset. ``delta_part`` must already be zero at t = 1.
    """
    n, T = A.shape
    lin = np.einsum("itk,tk->it", Xt, beta)
    gate = A if gating == "treated-only" else np.ones_like(A, dtype=float)
    offset = np.zeros((n, T))
    carry = np.zeros(n)
    for t in range(1, T):
        carry = gamma * (carry + gate[:, t - 1] * lin[:, t - 1])
        offset[:, t] = carry
    Y = g_part + offset + A * lin + delta_part
    return Y, offset


def _covariates(spec, rng):
    n, T = spec.n, spec.T
    Z = rng.standard_normal((n, 2))
    X = np.moveaxis(gen_fpc_covariate(spec.fpc, T, rng, size=(n, 2)), 1, 2)
    U = np.moveaxis(gen_fpc_covariate(spec.fpc, T, rng, size=(n, spec.R)), 1, 2)
    return Z, X, U


def _assemble(spec, rng, Z, X, U, g_mean, g_sd, pi, delta_mean, delta_noise):
    n, T = spec.n, spec.T
    A = (rng.random((n, T)) < pi).astype(float)
    if spec.g_noise == "observation":
        g_eps = g_sd * rng.standard_normal((n, T))
    else:
        g_eps = np.repeat(g_sd * rng.standard_normal((n, 1)), T, axis=1)
    delta_mean = delta_mean.copy()
    delta_mean[:, 0] = 0.0
    delta_noise = delta_noise.copy()
    delta_noise[:, 0] = 0.0
    beta = true_beta(T, spec.effect_scale)
    Xt = np.concatenate([np.ones((n, T, 1)), np.broadcast_to(Z[:, None, :], (n, T, 2)), X], axis=2)
    g_part = g_mean[:, None] + g_eps
    Y, offset = structural_outcome(A, Xt, beta, spec.gamma, g_part, delta_mean + delta_noise, spec.gating)
    data = PanelDataset(
        Y=Y, A=A.astype(np.int8), Z=Z, X=X, U=U, M=np.ones((n, T), dtype=bool),
        z_names=("z1", "z2"), x_names=("x1", "x2"),
        u_names=tuple(f"u{k + 1}" for k in range(U.shape[2])),
        meta={"case": spec.case, "gamma": spec.gamma},
    )
    truth = TruthRecord(
        beta=beta, gamma=spec.gamma, pi=pi, delta=delta_mean, g=g_mean,
        h0=g_mean[:, None] + offset + delta_mean, noise=g_eps + delta_noise,
    )
    return data, truth


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def gen_case1(spec: ScenarioSpec, rng=None):
    """Linear design with many irrelevant prognostic factors (``R = 8``)."""
    if spec.case != "I":
        raise ValueError("gen_case1 needs case 'I'")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    Z, X, U = _covariates(spec, rng)
    mu = X[:, :, 0] + U[:, :, 0] + U[:, :, 1]
    pi = _expit(0.5 * mu)
    g_mean = -1.5 + 0.1 * (Z[:, 0] + Z[:, 1])
    delta_noise = 0.05 * rng.standard_normal((spec.n, spec.T))
    return _assemble(spec, rng, Z, X, U, g_mean, 0.2, pi, 0.05 * mu, delta_noise)


def gen_case2(spec: ScenarioSpec, rng=None):
    """Tree-structured propensity and prognostic shift (``R = 2``)."""
    if spec.case != "II":
        raise ValueError("gen_case2 needs case 'II'")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    Z, X, U = _covariates(spec, rng)
    nu = 2.0 * ((X[:, :, 0] > 1.0) | (U[:, :, 0] > 0.2)).astype(float) - 1.0
    pi = 1.0 / (1.0 + np.exp(nu))
    g_mean = -1.5 + 0.5 * (np.abs(Z[:, 0]) > 0.5)
    delta_noise = 0.02 * rng.standard_normal((spec.n, spec.T))
    return _assemble(spec, rng, Z, X, U, g_mean, 0.2, pi, 0.15 * nu, delta_noise)


def generate(spec: ScenarioSpec, rng=None):
    return gen_case1(spec, rng) if spec.case == "I" else gen_case2(spec, rng)


def apply_missingness(data: PanelDataset, p: float, rng) -> PanelDataset:
    """Mask each outcome independently with probability ``p``; treatment and covariates stay."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1)")
    keep = rng.random(data.M.shape) >= p
    return data.with_mask(data.M & keep)


def simulate(spec: ScenarioSpec, rng=None):
    """Generate a scenario and apply its missingness; returns ``(data, truth)``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    data, truth = generate(spec, rng)
    if spec.missing_prob > 0:
        data = apply_missingness(data, spec.missing_prob, rng)
    return data, truth
