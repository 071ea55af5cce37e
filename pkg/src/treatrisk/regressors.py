"""The small regression menu used for nuisance fitting.

``RegressorSpec.fit(x, y)`` returns an immutable callable predictor. OLS and
ridge are solved directly from the normal equations; k-NN and boosted
trees delegate to scikit-learn.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesignWarning, InvalidInput

KINDS = ("ols", "ridge", "knn", "boosted_stumps")
FALLBACK_RIDGE = 1e-8


@dataclass(frozen=True)
class RegressorSpec:
    """Which regressor to fit and its hyperparameters.

    Only the fields relevant to ``kind`` are used: ``lam`` for ridge, ``k``
    for k-NN, and ``trees``/``depth``/``rate`` for boosting.
    """

    kind: str = "ols"
    lam: float = 1.0
    k: int = 10
    trees: int = 100
    depth: int = 1
    rate: float = 0.1
    standardize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown regressor kind {self.kind!r}; expected one of {KINDS}")
        if self.lam <= 0 or self.k < 1 or self.trees < 1 or self.depth < 1 or self.rate <= 0:
            raise InvalidInput("regressor hyperparameters must be positive")

    @classmethod
    def parse(cls, text):
        """Parse ``ols``, ``ridge:LAM``, ``knn:K`` or ``stumps:TREES,DEPTH,RATE``.

        A trailing ``+std`` enables standardization, e.g. ``knn:15+std``.
        """
        text = text.strip()
        standardize = text.endswith("+std")
        if standardize:
            text = text[:-4]
        name, _, args = text.partition(":")
        parts = [p for p in args.split(",") if p] if args else []
        try:
            if name == "ols" and not parts:
                return cls("ols", standardize=standardize)
            if name == "ridge" and len(parts) <= 1:
                return cls("ridge", lam=float(parts[0]) if parts else 1.0, standardize=standardize)
            if name == "knn" and len(parts) <= 1:
                return cls("knn", k=int(parts[0]) if parts else 10, standardize=standardize)
            if name in ("stumps", "boosted_stumps") and len(parts) <= 3:
                defaults = [100, 1, 0.1]
                vals = parts + [str(v) for v in defaults[len(parts):]]
                return cls("boosted_stumps", trees=int(vals[0]), depth=int(vals[1]),
                           rate=float(vals[2]), standardize=standardize)
        except ValueError as exc:
            raise InvalidInput(f"cannot parse learner {text!r}: {exc}") from None
        raise InvalidInput(f"cannot parse learner {text!r}")

    def label(self):
        if self.kind == "ols":
            s = "ols"
        elif self.kind == "ridge":
            s = f"ridge:{self.lam:g}"
        elif self.kind == "knn":
            s = f"knn:{self.k}"
        else:
            s = f"stumps:{self.trees},{self.depth},{self.rate:g}"
        return s + ("+std" if self.standardize else "")

    def fit(self, x, y, seed=0):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y, dtype=float).ravel()
        if x.shape[0] != y.shape[0] or y.size == 0:
            raise InvalidInput("x and y must have the same positive number of rows")
        center, scale = _scaling(x, self.standardize)
        z = (x - center) / scale
        if self.kind in ("ols", "ridge"):
            lam = 0.0 if self.kind == "ols" else self.lam
            intercept, coef = _linear_fit(z, y, lam)
            return LinearPredictor(intercept, coef, center, scale)
        if x.shape[1] == 0:
            return LinearPredictor(float(y.mean()), np.zeros(0), center, scale)
        if self.kind == "knn":
            from sklearn.neighbors import KNeighborsRegressor

            model = KNeighborsRegressor(n_neighbors=min(self.k, y.size)).fit(z, y)
        else:
            from sklearn.ensemble import GradientBoostingRegressor

            model = GradientBoostingRegressor(
                n_estimators=self.trees, max_depth=self.depth,
                learning_rate=self.rate, random_state=seed,
            ).fit(z, y)
        return ModelPredictor(model, center, scale)


def _scaling(x, standardize):
    d = x.shape[1]
    if not standardize or x.shape[0] < 2:
        return np.zeros(d), np.ones(d)
    sd = x.std(axis=0)
    return x.mean(axis=0), np.where(sd > 0, sd, 1.0)


def solve_least_squares(design, target, lam=0.0, penalty=None):
    """Minimize ``|target - design @ theta|^2 + lam * theta' penalty theta``.

    An unpenalized rank-deficient design triggers a ``DegenerateDesignWarning``
    and a refit with ridge ``FALLBACK_RIDGE``.
    """
    p = design.shape[1]
    if penalty is None:
        penalty = np.eye(p)
    if lam == 0.0 and np.linalg.matrix_rank(design) < p:
        warnings.warn(
            "singular least-squares design; refitting with ridge penalty "
            f"{FALLBACK_RIDGE:g}", DegenerateDesignWarning, stacklevel=3,
        )
        lam = FALLBACK_RIDGE
    lhs = design.T @ design + lam * penalty
    rhs = design.T @ target
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def _linear_fit(z, y, lam):
    n, d = z.shape
    design = np.column_stack([np.ones(n), z])
    penalty = np.eye(d + 1)
    penalty[0, 0] = 0.0
    theta = solve_least_squares(design, y, lam, penalty)
    return float(theta[0]), theta[1:]


@dataclass(frozen=True)
class LinearPredictor:
    intercept: float
    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.intercept + ((x - self.center) / self.scale) @ self.coef

    def coefficients(self):
        """Intercept and slopes on the original (unstandardized) scale."""
        slopes = self.coef / self.scale
        return self.intercept - float(np.dot(self.center, slopes)), slopes


@dataclass(frozen=True)
class ModelPredictor:
    model: object
    center: np.ndarray
    scale: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.model.predict((x - self.center) / self.scale)


def fit_logistic(x, a, ridge=1e-6, max_iter=100, tol=1e-10):
    """Logistic regression of ``a`` on ``[1, x]`` by iteratively reweighted least squares.

    A tiny ridge on the slopes keeps the Newton steps finite under separation.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    a = np.asarray(a, dtype=float).ravel()
    n, d = x.shape
    center, scale = _scaling(x, True)
    design = np.column_stack([np.ones(n), (x - center) / scale])
    penalty = ridge * np.eye(d + 1)
    penalty[0, 0] = 0.0
    theta = np.zeros(d + 1)
    pbar = np.clip(a.mean(), 1e-6, 1 - 1e-6)
    theta[0] = np.log(pbar / (1 - pbar))
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(design @ theta)))
        wts = np.maximum(p * (1 - p), 1e-12)
        grad = design.T @ (a - p) - penalty @ theta
        hess = (design * wts[:, None]).T @ design + penalty
        step = np.linalg.solve(hess, grad)
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            break
    return LogisticPredictor(theta, center, scale)


@dataclass(frozen=True)
class LogisticPredictor:
    theta: np.ndarray
    center: np.ndarray
    scale: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        eta = self.theta[0] + ((x - self.center) / self.scale) @ self.theta[1:]
        return 1.0 / (1.0 + np.exp(-eta))
