"""Nuisance learners: ridge regression, L2-penalised logistic regression and CART trees.

All learners take a feature matrix *without* an intercept column; linear
models add their own (unpenalised) intercept.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "LearnerSpec",
    "NuisancePredictor",
    "ConstantPredictor",
    "LinearPredictor",
    "LogisticPredictor",
    "TreePredictor",
    "fit_regressor",
    "fit_classifier",
    "fit_learner",
    "predict",
    "ridge_solve",
    "logistic_irls",
]

REGRESSORS = ("ridge-linear", "tree-regressor")
CLASSIFIERS = ("logistic", "tree-classifier")
DEFAULT_PENALTY_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass(frozen=True)
class LearnerSpec:
    """Learner choice plus hyperparameters.

    ``penalty=None`` selects the ridge/logistic penalty by k-fold
    cross-validation over ``penalty_grid``. Tree defaults mirror rpart
    (``min_split=20``, ``min_leaf=7``, ``cp=0.01``).
    """

    kind: str = "ridge-linear"
    penalty: Optional[float] = None
    penalty_grid: tuple = DEFAULT_PENALTY_GRID
    cv_folds: int = 5
    max_depth: int = 30
    min_leaf: int = 7
    min_split: int = 20
    cp: float = 0.01
    clip: float = 0.01

    def __post_init__(self):
        if self.kind not in REGRESSORS + CLASSIFIERS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.penalty is not None and self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if any(g < 0 for g in self.penalty_grid) or not self.penalty_grid:
            raise ValueError("penalty grid must be non-empty and non-negative")
        if self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("max_depth and min_leaf must be >= 1")
        if not 0 < self.clip < 0.5:
            raise ValueError("clip must lie in (0, 0.5)")
        object.__setattr__(self, "penalty_grid", tuple(float(g) for g in self.penalty_grid))

    @property
    def is_classifier(self):
        return self.kind in CLASSIFIERS

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class NuisancePredictor:
    """Fitted model; ``output`` is ``"value"`` or ``"probability"``."""

    p: int
    output: str = "value"
    clip: Optional[float] = None
    warning: Optional[str] = None

    def _predict(self, F):
        raise NotImplementedError

    def predict(self, F):
        F = np.asarray(F, dtype=float)
        if F.ndim == 1:
            F = F.reshape(1, -1) if self.p else F.reshape(-1, 0)
        if F.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {F.shape[1]}")
        out = self._predict(F)
        if self.output == "probability":
            out = np.clip(out, self.clip, 1.0 - self.clip)
        return out


@dataclass
class ConstantPredictor(NuisancePredictor):
    value: float
    p: int
    output: str = "value"
    clip: Optional[float] = None
    warning: Optional[str] = None

    def _predict(self, F):
        return np.full(F.shape[0], float(self.value))


@dataclass
class LinearPredictor(NuisancePredictor):
    """``intercept + F @ coef``; ``penalty`` is the penalty actually used."""

    intercept: float
    coef: np.ndarray
    penalty: float
    p: int = field(init=False)
    output: str = "value"
    clip: Optional[float] = None
    warning: Optional[str] = None

    def __post_init__(self):
        self.p = len(self.coef)

    def _predict(self, F):
        return self.intercept + F @ self.coef


@dataclass
class LogisticPredictor(LinearPredictor):
    deviance_trace: tuple = ()
    output: str = "probability"
    clip: Optional[float] = 0.01

    def _predict(self, F):
        return _expit(self.intercept + F @ self.coef)


@dataclass
class TreePredictor(NuisancePredictor):
    """Flat binary tree: row goes left when ``x[feature] < threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    p: int
    output: str = "value"
    clip: Optional[float] = None
    warning: Optional[str] = None

    @property
    def n_leaves(self):
        return int((self.feature < 0).sum())

    def apply(self, F):
        """Leaf index for each row."""
        node = np.zeros(F.shape[0], dtype=np.intp)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = F[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def _predict(self, F):
        return self.value[self.apply(F)]


def _expit(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_inputs(F, y):
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if F.ndim == 1:
        F = F.reshape(-1, 1)
    if F.shape[0] != y.shape[0]:
        raise ValueError("features and targets disagree in length")
    if F.shape[0] == 0:
        raise ValueError("cannot fit on an empty sample")
    if not np.isfinite(F).all():
        raise ValueError("non-finite feature value")
    if not np.isfinite(y).all():
        raise ValueError("non-finite target value")
    return F, y


def _folds(m, k):
    return np.arange(m) % k


# ---------------------------------------------------------------- ridge

def ridge_solve(F, y, penalty):
    """Solve ``(G'G + penalty*P) b = G'y`` with ``G = [1, F]`` and P zeroing the intercept."""
    G = np.column_stack([np.ones(F.shape[0]), F])
    GtG = G.T @ G
    P = np.eye(G.shape[1])
    P[0, 0] = 0.0
    lhs = GtG + penalty * P
    rhs = G.T @ y
    try:
        beta = np.linalg.solve(lhs, rhs)
        if not np.isfinite(beta).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return beta


def _ridge_cv(F, y, spec):
    m = F.shape[0]
    grid = spec.penalty_grid
    if len(grid) == 1:
        return grid[0]
    k = spec.cv_folds
    if m < 2 * k:
        return grid[0]
    fold = _folds(m, k)
    err = np.zeros(len(grid))
    for f in range(k):
        tr, te = fold != f, fold == f
        G = np.column_stack([np.ones(tr.sum()), F[tr]])
        GtG, Gty = G.T @ G, G.T @ y[tr]
        P = np.eye(G.shape[1])
        P[0, 0] = 0.0
        Gte = np.column_stack([np.ones(te.sum()), F[te]])
        for j, lam in enumerate(grid):
            try:
                b = np.linalg.solve(GtG + lam * P, Gty)
            except np.linalg.LinAlgError:
                b = np.linalg.lstsq(GtG + lam * P, Gty, rcond=None)[0]
            err[j] += np.sum((y[te] - Gte @ b) ** 2)
    return grid[int(np.argmin(err))]


# ---------------------------------------------------------------- logistic

def _penalized_deviance(G, y, beta, penalty, P):
    eta = G @ beta
    # -2 loglik = 2 * sum(log(1 + e^eta) - y*eta)
    dev = 2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta)
    return dev + penalty * beta @ P @ beta


def logistic_irls(F, y, penalty, max_iter=100, tol=1e-8, beta0=None):
    """Newton/IRLS with step halving on the penalised deviance.

    Returns ``(beta, deviance_trace)``; the trace is non-increasing.
    """
    G = np.column_stack([np.ones(F.shape[0]), F])
    q = G.shape[1]
    P = np.eye(q)
    P[0, 0] = 0.0
    if beta0 is None:
        beta = np.zeros(q)
        ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        beta[0] = np.log(ybar / (1 - ybar))
    else:
        beta = np.array(beta0, dtype=float)
    dev = _penalized_deviance(G, y, beta, penalty, P)
    trace = [dev]
    for _ in range(max_iter):
        mu = _expit(G @ beta)
        w = np.maximum(mu * (1 - mu), 1e-12)
        grad = G.T @ (y - mu) - penalty * (P @ beta)
        H = (G * w[:, None]).T @ G + penalty * P
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        s = 1.0
        for _ in range(30):
            cand = beta + s * step
            new_dev = _penalized_deviance(G, y, cand, penalty, P)
            if new_dev <= dev:
                break
            s *= 0.5
        else:
            break
        beta = cand
        change = dev - new_dev
        dev = new_dev
        trace.append(dev)
        if change < tol:
            break
    return beta, tuple(trace)


def _logistic_cv(F, y, spec):
    m = F.shape[0]
    grid = spec.penalty_grid
    if len(grid) == 1:
        return grid[0]
    k = spec.cv_folds
    if m < 2 * k:
        return grid[0]
    fold = _folds(m, k)
    err = np.zeros(len(grid))
    for f in range(k):
        tr, te = fold != f, fold == f
        if y[tr].min() == y[tr].max():
            continue
        Gte = np.column_stack([np.ones(te.sum()), F[te]])
        beta = None
        # warm start from the largest penalty downwards
        for j in reversed(range(len(grid))):
            beta, _ = logistic_irls(F[tr], y[tr], grid[j], max_iter=25, tol=1e-6, beta0=beta)
            eta = Gte @ beta
            err[j] += 2.0 * np.sum(np.logaddexp(0.0, eta) - y[te] * eta)
    return grid[int(np.argmin(err))]


# ---------------------------------------------------------------- trees

def _best_split(Fn, yn, classify, min_leaf):
    """Best (gain, feature, threshold) over all features; ties keep the lowest feature and threshold."""
    m, p = Fn.shape
    best = (0.0, -1, 0.0)
    if m < 2 * min_leaf:
        return best
    total = yn.sum()
    pos = np.arange(1, m)  # size of the left child
    valid_size = (pos >= min_leaf) & (m - pos >= min_leaf)
    if classify:
        parent = 2.0 * total * (m - total) / m
    else:
        parent_term = total * total / m
    for j in range(p):
        order = np.argsort(Fn[:, j], kind="stable")
        xs = Fn[order, j]
        cs = np.cumsum(yn[order])[:-1]
        ok = valid_size & (xs[1:] > xs[:-1])
        if not ok.any():
            continue
        nl = pos[ok].astype(float)
        nr = m - nl
        sl = cs[ok]
        sr = total - sl
        if classify:
            gain = parent - (2.0 * sl * (nl - sl) / nl + 2.0 * sr * (nr - sr) / nr)
        else:
            gain = sl * sl / nl + sr * sr / nr - parent_term
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            idx = np.flatnonzero(ok)[k]
            best = (float(gain[k]), j, 0.5 * (xs[idx] + xs[idx + 1]))
    return best


def _fit_tree(F, y, spec, classify):
    m, p = F.shape
    if classify:
        root_impurity = 2.0 * y.sum() * (m - y.sum()) / m
    else:
        root_impurity = np.sum((y - y.mean()) ** 2)
    min_gain = spec.cp * root_impurity
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        counts.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(m))
    stack = [(root, np.arange(m), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= spec.max_depth or len(idx) < spec.min_split:
            continue
        gain, j, thr = _best_split(F[idx], y[idx], classify, spec.min_leaf)
        if j < 0 or gain <= 0.0 or gain < min_gain:
            continue
        go_left = F[idx, j] < thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = j, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is expanded first (fixed node order)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return TreePredictor(
        feature=np.array(feature, dtype=np.intp), threshold=np.array(threshold),
        left=np.array(left, dtype=np.intp), right=np.array(right, dtype=np.intp),
        value=np.array(value), n_samples=np.array(counts, dtype=np.intp), p=p,
        output="probability" if classify else "value", clip=spec.clip if classify else None,
    )


# ---------------------------------------------------------------- public API

def fit_regressor(spec: LearnerSpec, features, targets) -> NuisancePredictor:
    if spec.is_classifier:
        raise ValueError(f"{spec.kind} is not a regressor")
    F, y = _check_inputs(features, targets)
    if spec.kind == "tree-regressor":
        return _fit_tree(F, y, spec, classify=False)
    lam = spec.penalty if spec.penalty is not None else _ridge_cv(F, y, spec)
    beta = ridge_solve(F, y, lam)
    return LinearPredictor(intercept=float(beta[0]), coef=beta[1:], penalty=lam)


def fit_classifier(spec: LearnerSpec, features, labels) -> NuisancePredictor:
    if not spec.is_classifier:
        raise ValueError(f"{spec.kind} is not a classifier")
    F, y = _check_inputs(features, labels)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary 0/1")
    if y.min() == y.max():
        value = 1.0 - spec.clip if y[0] == 1 else spec.clip
        return ConstantPredictor(
            value=value, p=F.shape[1], output="probability", clip=spec.clip,
            warning=f"single-class labels ({int(y[0])}); constant probability {value}",
        )
    if spec.kind == "tree-classifier":
        return _fit_tree(F, y, spec, classify=True)
    lam = spec.penalty if spec.penalty is not None else _logistic_cv(F, y, spec)
    beta, trace = logistic_irls(F, y, lam)
    return LogisticPredictor(intercept=float(beta[0]), coef=beta[1:], penalty=lam,
                             deviance_trace=trace, clip=spec.clip)


def fit_learner(spec: LearnerSpec, features, targets) -> NuisancePredictor:
    if spec.is_classifier:
        return fit_classifier(spec, features, targets)
    return fit_regressor(spec, features, targets)


def predict(pred: NuisancePredictor, features) -> np.ndarray:
    return pred.predict(features)
