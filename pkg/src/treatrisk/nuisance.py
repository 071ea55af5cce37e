"""Cross-fitting and the nuisance estimators: propensity, outcome means, CATE,
conditional outcome variances, and the out-of-fold CATE quantile.

Nuisance functions follow simple calling conventions:

* propensity ``e(x) -> (n,)``
* outcome mean ``mu(x, a) -> (n,)`` with ``a`` a scalar or an ``(n,)`` array
* CATE ``tau(x) -> (n,)``
* outcome variance ``var(x, a) -> (n,)``
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInput
from .regressors import LinearPredictor, RegressorSpec, fit_logistic, solve_least_squares
from .risk_core import check_alpha, empirical_quantile

DEFAULT_CLIP = 0.01


@dataclass(frozen=True)
class ObservationTable:
    """Covariates ``x`` (n, d), binary treatment ``a`` and outcome ``y``."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.a).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        if x.ndim != 2 or x.shape[0] != n or a.shape[0] != n:
            raise InvalidInput("x, a and y must have the same number of rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInput("x and y must be finite")
        if not np.all((a == 0) | (a == 1)):
            raise InvalidInput("treatment must be 0 or 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a.astype(float))
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def subset(self, idx):
        return ObservationTable(self.x[idx], self.a[idx], self.y[idx])

    def fingerprint(self):
        h = hashlib.sha1()
        for arr in (self.x, self.a, self.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class FoldPlan:
    """Fold membership of each row; ``assignment[i] == k`` puts row i in fold k+1."""

    K: int
    assignment: np.ndarray
    seed: int
    mode: str

    def test_idx(self, k):
        return np.flatnonzero(self.assignment == k)

    def train_idx(self, k):
        return np.flatnonzero(self.assignment != k)


def make_fold_plan(n, K, seed=0, mode="shuffled"):
    """Assign rows to K folds by ``i = k - 1 (mod K)`` on 1-based row numbers.

    ``mode="shuffled"`` applies the congruence to a seeded permutation of the
    rows instead of their given order.
    """
    n, K = int(n), int(K)
    if K < 2 or 2 * K > n:
        raise InvalidInput(f"need 2 <= K <= n/2, got K={K}, n={n}")
    congruence = np.arange(1, n + 1) % K
    if mode == "literal":
        assignment = congruence
    elif mode == "shuffled":
        perm = np.random.default_rng(seed).permutation(n)
        assignment = np.empty(n, dtype=int)
        assignment[perm] = congruence
    else:
        raise InvalidInput(f"unknown fold mode {mode!r}")
    return FoldPlan(K, assignment.astype(int), int(seed), mode)


def ipw_weight(a, e):
    """``(a - e) / (e (1 - e))``."""
    return (a - e) / (e * (1.0 - e))


def pseudo_outcome(a, y, e):
    return ipw_weight(a, e) * y


def dr_pseudo_outcome(a, y, e, mu0, mu1):
    mua = np.where(a == 1, mu1, mu0)
    return mu1 - mu0 + ipw_weight(a, e) * (y - mua)


def _const(value):
    def fn(x):
        return np.full(np.asarray(x).shape[0], value, dtype=float)
    return fn


def fit_pseudo_outcome_cate(train, e, reg=RegressorSpec(), seed=0):
    """Regress the inverse-propensity pseudo-outcome on X.

    ``e`` is the known propensity, a callable or a constant.
    """
    e_fn = _const(float(e)) if np.isscalar(e) else e
    ev = e_fn(train.x)
    return reg.fit(train.x, pseudo_outcome(train.a, train.y, ev), seed=seed)


def fit_dr_learner(train, e_hat, mu_hat, reg=RegressorSpec(), seed=0):
    e_fn = _const(float(e_hat)) if np.isscalar(e_hat) else e_hat
    ev = e_fn(train.x)
    delta = dr_pseudo_outcome(train.a, train.y, ev, mu_hat(train.x, 0), mu_hat(train.x, 1))
    return reg.fit(train.x, delta, seed=seed)


def fit_r_learner_linear(train, e_hat, mu_bar_hat):
    """Linear R-learner: least squares of ``Y - mu_bar`` on ``(A - e) [1, X]``."""
    e_fn = _const(float(e_hat)) if np.isscalar(e_hat) else e_hat
    resid_a = train.a - e_fn(train.x)
    target = train.y - mu_bar_hat(train.x)
    design = np.column_stack([np.ones(train.n), train.x]) * resid_a[:, None]
    theta = solve_least_squares(design, target)
    d = train.d
    return LinearPredictor(float(theta[0]), theta[1:], np.zeros(d), np.ones(d))


@dataclass(frozen=True)
class MarginalOutcome:
    """``mu(x, a) = mu_bar(x) + (a - e(x)) tau(x)``."""

    mu_bar: Callable
    e: Callable
    tau: Callable

    def __call__(self, x, a):
        return self.mu_bar(x) + (np.asarray(a, dtype=float) - self.e(x)) * self.tau(x)


def mu_from_marginal(mu_bar_hat, e, tau_hat):
    e_fn = _const(float(e)) if np.isscalar(e) else e
    return MarginalOutcome(mu_bar_hat, e_fn, tau_hat)


@dataclass(frozen=True)
class ArmOutcome:
    """Separate regressions for each arm, selected by ``a``."""

    arm0: Callable
    arm1: Callable
    floor: float | None = None

    def __call__(self, x, a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 0:
            out = self.arm1(x) if a == 1 else self.arm0(x)
        else:
            out = np.where(a == 1, self.arm1(x), self.arm0(x))
        if self.floor is not None:
            out = np.maximum(out, self.floor)
        return out


def fit_arm_regressions(train, reg=RegressorSpec(), seed=0):
    preds = []
    for arm in (0, 1):
        rows = train.a == arm
        if rows.sum() < 2:
            raise InvalidInput(f"arm {arm} has fewer than 2 training rows")
        preds.append(reg.fit(train.x[rows], train.y[rows], seed=seed))
    return ArmOutcome(*preds)


def fit_conditional_variance(train, mu_hat, reg=RegressorSpec(), seed=0):
    """Per-arm regression of squared residuals ``(Y - mu(X, A))^2`` on X, clamped at 0."""
    preds = []
    for arm in (0, 1):
        rows = train.a == arm
        if rows.sum() < 2:
            raise InvalidInput(f"arm {arm} has fewer than 2 training rows")
        resid2 = (train.y[rows] - mu_hat(train.x[rows], arm)) ** 2
        preds.append(reg.fit(train.x[rows], resid2, seed=seed))
    return ArmOutcome(*preds, floor=0.0)


def out_of_fold_quantile(tau_hat, train, alpha):
    """Empirical alpha-quantile of ``tau_hat`` over the training rows."""
    alpha = check_alpha(alpha)
    if train.n == 0:
        raise InvalidInput("training slice is empty")
    return empirical_quantile(tau_hat(train.x), alpha)


def cross_validated_rmse(data, reg=RegressorSpec(), K=5, seed=0):
    """Out-of-fold RMSE of per-arm outcome regressions, ``(rmse0, rmse1)``."""
    plan = make_fold_plan(data.n, K, seed)
    pred = np.empty(data.n)
    for k in range(K):
        tr = data.subset(plan.train_idx(k))
        te = plan.test_idx(k)
        mu = fit_arm_regressions(tr, reg, seed)
        pred[te] = mu(data.x[te], data.a[te])
    sq = (data.y - pred) ** 2
    return (float(np.sqrt(sq[data.a == 0].mean())), float(np.sqrt(sq[data.a == 1].mean())))


@dataclass
class NuisanceLearners:
    """How each nuisance is obtained inside a training fold.

    Attributes
    ----------
    propensity : float, "logistic" or callable
        Known constant, logistic regression by IRLS, or a known function.
    cate : "pseudo", "dr", "r" or callable
        Pseudo-outcome regression (known propensity), DR-learner, linear
        R-learner, or a fixed function.
    outcome : "marginal", "arms", "zero" or callable
        Regression of Y on X combined with the CATE estimate, per-arm
        regressions, the zero function, or a fixed function.
    variance : None, "fit" or callable
        Conditional outcome variance per arm; only needed for the
        variance-based lower bound.
    clip : float
        Propensities are clipped into ``[clip, 1 - clip]``.
    outcome_bound : float, optional
        Declared bound on ``|Y|``. Outcome-mean predictions are clipped to
        it and violations in the data are counted, not corrected.
    """

    propensity: float | str | Callable = 0.5
    cate: str | Callable = "pseudo"
    outcome: str | Callable = "marginal"
    variance: str | Callable | None = None
    cate_regressor: RegressorSpec = field(default_factory=RegressorSpec)
    outcome_regressor: RegressorSpec = field(default_factory=RegressorSpec)
    variance_regressor: RegressorSpec = field(default_factory=RegressorSpec)
    clip: float = DEFAULT_CLIP
    outcome_bound: float | None = None

    def __post_init__(self):
        if not 0.0 < self.clip < 0.5:
            raise InvalidInput("propensity clip must lie in (0, 0.5)")
        if isinstance(self.propensity, str) and self.propensity != "logistic":
            raise InvalidInput(f"unknown propensity mode {self.propensity!r}")
        if not isinstance(self.propensity, (str,)) and not callable(self.propensity):
            if not 0.0 < float(self.propensity) < 1.0:
                raise InvalidInput("constant propensity must lie in (0, 1)")
        if isinstance(self.cate, str) and self.cate not in ("pseudo", "dr", "r"):
            raise InvalidInput(f"unknown CATE learner {self.cate!r}")
        if isinstance(self.outcome, str) and self.outcome not in ("marginal", "arms", "zero"):
            raise InvalidInput(f"unknown outcome model {self.outcome!r}")
        if isinstance(self.variance, str) and self.variance != "fit":
            raise InvalidInput(f"unknown variance mode {self.variance!r}")

    def describe(self):
        def name(v, reg=None):
            if callable(v) and not isinstance(v, str):
                return getattr(v, "__name__", "callable")
            if isinstance(v, str) and reg is not None and v != "zero":
                return f"{v}[{reg.label()}]"
            return v if isinstance(v, str) or v is None else f"constant:{v:g}"

        return {
            "propensity": name(self.propensity),
            "cate": name(self.cate, self.cate_regressor),
            "outcome": name(self.outcome, self.outcome_regressor),
            "variance": name(self.variance, self.variance_regressor),
            "clip": self.clip,
            "outcome_bound": self.outcome_bound,
        }


@dataclass(frozen=True)
class ClippedPropensity:
    raw: Callable
    clip: float

    def __call__(self, x):
        return np.clip(self.raw(x), self.clip, 1.0 - self.clip)


@dataclass(frozen=True)
class BoundedOutcome:
    raw: Callable
    bound: float

    def __call__(self, x, a):
        return np.clip(self.raw(x, a), -self.bound, self.bound)


def _zero_outcome(x, a):
    return np.zeros(np.asarray(x).shape[0])


@dataclass
class FoldFit:
    """Nuisances fitted on one training fold, plus their evaluations.

    ``tau_train`` (and ``var*_train``) are evaluated on the training rows and
    feed the quantile step; the remaining arrays are evaluated on the
    held-out ``test_idx`` rows and feed the scores.
    """

    k: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    e_hat: Callable
    mu_hat: Callable
    tau_hat: Callable
    var_hat: Callable | None
    tau_train: np.ndarray
    e: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray
    var0_train: np.ndarray | None = None
    var1_train: np.ndarray | None = None
    var0: np.ndarray | None = None
    var1: np.ndarray | None = None


@dataclass
class NuisanceFit:
    plan: FoldPlan
    folds: list
    learners: dict
    variance_fitted: bool
    fingerprint: str
    metadata: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.plan.K

    @property
    def seed(self):
        return self.plan.seed


def _fit_fold(data, k, train_idx, test_idx, learners, seed):
    tr = data.subset(train_idx)
    x_te = data.x[test_idx]

    p = learners.propensity
    if isinstance(p, str):
        e_raw = fit_logistic(tr.x, tr.a)
    elif callable(p):
        e_raw = p
    else:
        e_raw = _const(float(p))
    e_fn = ClippedPropensity(e_raw, learners.clip)

    arms = None
    mu_bar = None
    out = learners.outcome
    if out == "arms":
        arms = fit_arm_regressions(tr, learners.outcome_regressor, seed)

    c = learners.cate
    if c == "pseudo":
        tau_fn = fit_pseudo_outcome_cate(tr, e_fn, learners.cate_regressor, seed)
    elif c == "dr":
        if callable(out) and not isinstance(out, str):
            mu_for_dr = out
        elif out == "zero":
            mu_for_dr = _zero_outcome
        else:
            mu_for_dr = arms if arms is not None else fit_arm_regressions(
                tr, learners.outcome_regressor, seed)
        tau_fn = fit_dr_learner(tr, e_fn, mu_for_dr, learners.cate_regressor, seed)
    elif c == "r":
        if callable(out) and not isinstance(out, str):
            def mu_bar(x, _mu=out):
                ex = e_fn(x)
                return ex * _mu(x, 1) + (1 - ex) * _mu(x, 0)
        else:
            mu_bar = learners.outcome_regressor.fit(tr.x, tr.y, seed=seed)
        tau_fn = fit_r_learner_linear(tr, e_fn, mu_bar)
    else:
        tau_fn = c

    if out == "marginal":
        if mu_bar is None:
            mu_bar = learners.outcome_regressor.fit(tr.x, tr.y, seed=seed)
        mu_fn = mu_from_marginal(mu_bar, e_fn, tau_fn)
    elif out == "arms":
        mu_fn = arms
    elif out == "zero":
        mu_fn = _zero_outcome
    else:
        mu_fn = out
    if learners.outcome_bound is not None:
        mu_fn = BoundedOutcome(mu_fn, float(learners.outcome_bound))

    v = learners.variance
    if v == "fit":
        var_fn = fit_conditional_variance(tr, mu_fn, learners.variance_regressor, seed)
    else:
        var_fn = v

    fold = FoldFit(
        k=k, train_idx=train_idx, test_idx=test_idx,
        e_hat=e_fn, mu_hat=mu_fn, tau_hat=tau_fn, var_hat=var_fn,
        tau_train=np.asarray(tau_fn(tr.x), dtype=float),
        e=np.asarray(e_fn(x_te), dtype=float),
        mu0=np.asarray(mu_fn(x_te, 0), dtype=float),
        mu1=np.asarray(mu_fn(x_te, 1), dtype=float),
        tau=np.asarray(tau_fn(x_te), dtype=float),
    )
    if var_fn is not None:
        fold.var0_train = np.asarray(var_fn(tr.x, 0), dtype=float)
        fold.var1_train = np.asarray(var_fn(tr.x, 1), dtype=float)
        fold.var0 = np.asarray(var_fn(x_te, 0), dtype=float)
        fold.var1 = np.asarray(var_fn(x_te, 1), dtype=float)
    raw_e = np.asarray(e_raw(x_te), dtype=float)
    clipped = int(np.sum((raw_e < learners.clip) | (raw_e > 1 - learners.clip)))
    return fold, clipped


def fit_nuisances(data, learners=None, K=5, seed=0, fold_mode="shuffled"):
    """Cross-fit all nuisances: fold k's functions are fit on the other folds.

    Returns a ``NuisanceFit`` that every estimator in ``treatrisk.inference``
    can reuse, so several targets can share exactly the same folds.
    """
    learners = learners or NuisanceLearners()
    plan = make_fold_plan(data.n, K, seed, fold_mode)
    folds = []
    clipped = 0
    for k in range(plan.K):
        try:
            fold, nclip = _fit_fold(data, k, plan.train_idx(k), plan.test_idx(k), learners, seed + k)
        except InvalidInput as exc:
            raise InvalidInput(f"fold {k + 1}: {exc}") from exc
        folds.append(fold)
        clipped += nclip
    meta = {"propensity_clip_rate": clipped / data.n}
    if learners.outcome_bound is not None:
        meta["outcome_bound_violations"] = int(np.sum(np.abs(data.y) > learners.outcome_bound))
    return NuisanceFit(
        plan=plan, folds=folds, learners=learners.describe(),
        variance_fitted=learners.variance == "fit",
        fingerprint=data.fingerprint(), metadata=meta,
    )
