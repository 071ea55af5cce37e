"""Synthetic experiments with known ground truth and a Monte Carlo harness.

Covariates are uniform on ``[0, 1]^d`` and the CATE is linear, so the
distribution of ``tau(X)`` is a shifted sum of scaled uniforms. Its CDF and
partial moments have closed forms (inclusion-exclusion over the box
corners), which gives exact CVaR targets without simulation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, stats

from . import kernels
from .errors import InvalidInput
from .inference import (
    estimate_cate_cvar, estimate_lower_bound_mixture, estimate_lower_bound_variance,
    partial_id_interval,
)
from .nuisance import NuisanceLearners, ObservationTable, fit_nuisances
from .regressors import RegressorSpec
from .risk_core import as_sample, check_alpha, normal_cvar

KINDS = ("bivariate_normal", "linear_cate", "equal_mixture_tight", "skewed_two_point")
DEFAULT_COEF = (-0.2, 1.0, -0.5, 0.25)


class LinearUniformCate:
    """Distribution of ``c0 + sum_j c_j U_j`` with independent ``U_j ~ U[0, 1]``."""

    def __init__(self, coef):
        coef = np.asarray(coef, dtype=float).ravel()
        if coef.size == 0:
            raise InvalidInput("coef needs at least an intercept")
        slopes = coef[1:]
        # c U = c + |c| (1 - U) for c < 0, and 1 - U is again uniform
        self.shift = float(coef[0] + slopes[slopes < 0].sum())
        self.scales = np.abs(slopes[slopes != 0])
        self.m = self.scales.size
        corners = []
        for r in range(self.m + 1):
            for sub in itertools.combinations(range(self.m), r):
                corners.append(((-1) ** r, float(self.scales[list(sub)].sum())))
        self._corners = corners
        self._norm = float(np.prod(self.scales)) if self.m else 1.0

    @property
    def support(self):
        return self.shift, self.shift + float(self.scales.sum())

    def _g(self, s, k):
        # sum over corners of sign * (s - corner)_+^k / (k! prod scales)
        s = np.asarray(s, dtype=float) - self.shift
        total = np.zeros_like(s)
        for sign, c in self._corners:
            total = total + sign * np.maximum(s - c, 0.0) ** k
        return total / (math.factorial(k) * self._norm)

    def cdf(self, t):
        if self.m == 0:
            return (np.asarray(t, dtype=float) >= self.shift).astype(float)
        lo, hi = self.support
        t = np.asarray(t, dtype=float)
        return np.where(t >= hi, 1.0, np.where(t <= lo, 0.0, self._g(t, self.m)))

    def pdf(self, t):
        if self.m == 0:
            raise InvalidInput("constant CATE has no density")
        lo, hi = self.support
        t = np.asarray(t, dtype=float)
        inside = (t > lo) & (t < hi)
        return np.where(inside, self._g(t, self.m - 1) if self.m > 1 else 1.0 / self._norm, 0.0)

    def lower_partial(self, t):
        """``E[(t - tau)_+]``."""
        if self.m == 0:
            return np.maximum(np.asarray(t, dtype=float) - self.shift, 0.0)
        lo, hi = self.support
        t = np.asarray(t, dtype=float)
        mean = self.shift + 0.5 * float(self.scales.sum())
        return np.where(t >= hi, t - mean, np.where(t <= lo, 0.0, self._g(t, self.m + 1)))

    def quantile(self, alpha):
        alpha = check_alpha(alpha)
        if self.m == 0:
            return self.shift
        lo, hi = self.support
        if alpha == 1.0:
            return hi
        return optimize.brentq(lambda t: float(self.cdf(t)) - alpha, lo, hi, xtol=1e-14)

    def cvar(self, alpha):
        beta = self.quantile(alpha)
        return float(beta - self.lower_partial(beta) / alpha)

    def mixture_cvar(self, alpha, offsets, probs):
        """CVaR of ``tau + offset`` where the offset is drawn independently."""
        alpha = check_alpha(alpha)
        offsets = np.asarray(offsets, dtype=float)
        probs = np.asarray(probs, dtype=float)

        def cdf(t):
            return float(np.dot(probs, [self.cdf(t - o) for o in offsets]))

        lo = self.support[0] + offsets.min()
        hi = self.support[1] + offsets.max()
        beta = hi if alpha == 1.0 else optimize.brentq(lambda t: cdf(t) - alpha, lo - 1, hi + 1,
                                                        xtol=1e-14)
        tail = float(np.dot(probs, [self.lower_partial(beta - o) for o in offsets]))
        return beta - tail / alpha

    def expect(self, fn):
        """``E[fn(tau)]`` by adaptive quadrature against the density."""
        if self.m == 0:
            return float(fn(np.array([self.shift]))[0])
        lo, hi = self.support
        kinks = sorted({lo + c for _, c in self._corners if lo < lo + c < hi})
        val, _ = integrate.quad(lambda t: float(fn(np.array([t]))[0] * self.pdf(t)), lo, hi,
                                points=kinks or None, limit=200, epsabs=1e-12, epsrel=1e-10)
        return val

    def variance_bound(self, alpha, sigma2):
        """Population variance-based lower bound with a constant ``sigma2``."""
        alpha = check_alpha(alpha)
        if alpha == 1.0:
            return self.expect(lambda t: t)

        def neg(beta):
            inner = self.expect(lambda t: t - beta - np.sqrt((t - beta) ** 2 + sigma2))
            return -(beta + inner / (2 * alpha))

        lo, hi = self.support
        pad = 5.0 * math.sqrt(sigma2) / math.sqrt(alpha * (1 - alpha)) + 1.0
        res = optimize.minimize_scalar(neg, bounds=(lo - pad, hi + pad), method="bounded",
                                       options={"xatol": 1e-10})
        return -float(res.fun)


@dataclass(frozen=True)
class DgpSpec:
    """A data-generating process plus sample size and seed.

    ``linear_cate`` draws ``X ~ U[0,1]^d``, ``tau(X) = coef . [1, X]`` and
    independent Gaussian outcome noise of scale ``noise`` in each arm.
    ``equal_mixture_tight`` and ``skewed_two_point`` share those covariates
    and CATE but make the ITE equal to ``tau(X) - b`` with probability
    ``1/2`` (resp. ``q``), balancing the other atom so that E[ITE | X] = tau(X).
    ``bivariate_normal`` has no covariates and jointly normal potential
    outcomes with unit variances and correlation ``rho``.
    """

    kind: str = "linear_cate"
    n: int = 2000
    seed: int = 0
    d: int = 3
    coef: tuple | None = None
    noise: float = 1.0
    e: float | str = 0.5
    mu0: float = 0.0
    mu1: float = 0.0
    rho: float = 0.0
    b: float = 0.5
    q: float = 0.9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown DGP kind {self.kind!r}")
        if self.n < 1:
            raise InvalidInput("n must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidInput("rho must lie in [-1, 1]")
        if self.noise < 0 or self.b < 0:
            raise InvalidInput("noise and b must be nonnegative")
        if not 0.0 < self.q < 1.0:
            raise InvalidInput("q must lie in (0, 1)")
        if isinstance(self.e, str):
            if self.e != "logistic":
                raise InvalidInput("e must be a constant in (0, 1) or 'logistic'")
        elif not 0.0 < float(self.e) < 1.0:
            raise InvalidInput("e must be a constant in (0, 1) or 'logistic'")
        if self.kind != "bivariate_normal":
            if self.d < 1:
                raise InvalidInput("d must be positive")
            if len(self.coefficients()) != self.d + 1:
                raise InvalidInput("coef must have d + 1 entries")

    def with_seed(self, seed):
        return DgpSpec(**{**asdict(self), "seed": int(seed)})

    def coefficients(self):
        if self.coef is not None:
            return np.asarray(self.coef, dtype=float)
        base = np.zeros(self.d + 1)
        k = min(len(DEFAULT_COEF), self.d + 1)
        base[:k] = DEFAULT_COEF[:k]
        return base

    def cate_distribution(self):
        if self.kind == "bivariate_normal":
            return LinearUniformCate([self.mu1 - self.mu0])
        return LinearUniformCate(self.coefficients())

    def ite_offsets(self):
        """Atoms and probabilities of ``ITE - tau(X)`` for the two-point DGPs."""
        if self.kind == "equal_mixture_tight":
            return np.array([-self.b, self.b]), np.array([0.5, 0.5])
        if self.kind == "skewed_two_point":
            return np.array([-self.b, self.b * self.q / (1 - self.q)]), np.array([self.q, 1 - self.q])
        raise InvalidInput(f"{self.kind} has no two-point ITE offsets")


@dataclass(frozen=True)
class LinearTau:
    coef: np.ndarray

    def __call__(self, x):
        return self.coef[0] + np.asarray(x, dtype=float) @ self.coef[1:]


@dataclass(frozen=True)
class LogisticPropensity:
    def __call__(self, x):
        return 1.0 / (1.0 + np.exp(-(0.3 - 1.0 * np.asarray(x, dtype=float)[:, 0])))


def _baseline(x):
    x = np.asarray(x, dtype=float)
    out = np.sin(np.pi * x[:, 0])
    if x.shape[1] > 1:
        out = out + 0.5 * x[:, 1] ** 2
    return out


@dataclass(frozen=True)
class TrueOutcome:
    tau: Callable

    def __call__(self, x, a):
        return _baseline(x) + np.asarray(a, dtype=float) * self.tau(x)


@dataclass
class Truth:
    tau: Callable
    e: Callable | float
    mu: Callable
    ite: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    ite_variance: float


@dataclass
class SyntheticSample:
    table: ObservationTable
    truth: Truth


def _constant_fn(value):
    def fn(x):
        return np.full(np.asarray(x).shape[0], value, dtype=float)
    return fn


def generate(spec):
    """Draw a factual sample and its latent ground truth; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    if spec.kind == "bivariate_normal":
        x = np.zeros((n, 0))
        z0, z1 = rng.standard_normal(n), rng.standard_normal(n)
        y0 = spec.mu0 + z0
        y1 = spec.mu1 + spec.rho * z0 + math.sqrt(max(1 - spec.rho ** 2, 0.0)) * z1
        tau = _constant_fn(spec.mu1 - spec.mu0)

        def mu(x, a, _m0=spec.mu0, _m1=spec.mu1):
            return np.where(np.asarray(a) == 1, _m1, _m0) * np.ones(np.asarray(x).shape[0])

        e_fn = _constant_fn(0.5)
        e_val = 0.5
        ite_var = 2.0 - 2.0 * spec.rho
    else:
        x = rng.uniform(size=(n, spec.d))
        tau = LinearTau(spec.coefficients())
        mu = TrueOutcome(tau)
        t = tau(x)
        y0 = _baseline(x) + spec.noise * rng.standard_normal(n)
        if spec.kind == "linear_cate":
            y1 = _baseline(x) + t + spec.noise * rng.standard_normal(n)
            ite_var = 2.0 * spec.noise ** 2
        else:
            offsets, probs = spec.ite_offsets()
            pick = rng.uniform(size=n) < probs[0]
            y1 = y0 + t + np.where(pick, offsets[0], offsets[1])
            ite_var = float(np.dot(probs, offsets ** 2))
        if spec.e == "logistic":
            e_fn = LogisticPropensity()
            e_val = e_fn
        else:
            e_val = float(spec.e)
            e_fn = _constant_fn(e_val)
    a = (rng.uniform(size=n) < e_fn(x)).astype(float)
    y = np.where(a == 1, y1, y0)
    truth = Truth(tau=tau, e=e_val, mu=mu, ite=y1 - y0, y0=y0, y1=y1, ite_variance=ite_var)
    return SyntheticSample(ObservationTable(x, a, y), truth)


def true_cate_cvar(spec, alpha):
    return spec.cate_distribution().cvar(alpha)


def true_mixture_bound(spec, alpha, b=None):
    """Two-sided range lower bound evaluated on the population CATE."""
    b = spec.b if b is None else b
    return spec.cate_distribution().mixture_cvar(alpha, [-b, b], [0.5, 0.5])


def true_variance_bound(spec, alpha, sigma2):
    return spec.cate_distribution().variance_bound(alpha, sigma2)


def true_ite_cvar(spec, alpha):
    """CVaR of the individual treatment effect under ``spec``."""
    alpha = check_alpha(alpha)
    dist = spec.cate_distribution()
    if spec.kind == "bivariate_normal":
        return normal_cvar(spec.mu1 - spec.mu0, math.sqrt(2.0 - 2.0 * spec.rho), alpha)
    if spec.kind in ("equal_mixture_tight", "skewed_two_point"):
        offsets, probs = spec.ite_offsets()
        return dist.mixture_cvar(alpha, offsets, probs)
    s = math.sqrt(2.0) * spec.noise
    if s == 0:
        return dist.cvar(alpha)
    if alpha == 1.0:
        return dist.expect(lambda t: t)

    def cdf(beta):
        return dist.expect(lambda t: stats.norm.cdf((beta - t) / s))

    def lower_partial(beta):
        def g(t):
            u = (beta - t) / s
            return (beta - t) * stats.norm.cdf(u) + s * stats.norm.pdf(u)
        return dist.expect(g)

    lo, hi = dist.support
    beta = optimize.brentq(lambda b: cdf(b) - alpha, lo - 10 * s, hi + 10 * s, xtol=1e-12)
    return beta - lower_partial(beta) / alpha


def brute_force_cvar(values, alpha, grid=10_000, weights=None):
    """Maximize ``beta + E[(Z - beta)_-] / alpha`` over a dense grid.

    The grid spans ``[min, max]`` of the sample. Samples with at most
    ``grid`` points also have every value added to the grid, which makes the
    search exact since the maximizer is a sample value. Larger samples use the
    grid alone.
    """
    alpha = check_alpha(alpha)
    if grid < 1000:
        raise InvalidInput("grid must have at least 1000 points")
    z, w = as_sample(values, weights)
    betas = np.linspace(z.min(), z.max(), int(grid))
    if z.size <= grid:
        betas = np.unique(np.concatenate([betas, z]))
    return float(kernels.grid_cvar_max(z, w, alpha, betas))


PERTURB = (1.5, 0.5)


def perturbed_coefficients(coef):
    """Slopes scaled alternately by 1.5 and 0.5; the intercept is kept."""
    coef = np.array(coef, dtype=float)
    for j in range(1, coef.size):
        coef[j] *= PERTURB[(j - 1) % 2]
    return coef


def wrong_outcome(x, a):
    return 0.5 + np.asarray(x, dtype=float)[:, 0] * (1.0 + 0.0 * np.asarray(a, dtype=float))


NUISANCE_MODES = ("true", "fitted", "zero_mu", "wrong_mu", "wrong_tau")


def learners_for(mode, sample, spec):
    """Nuisance configuration for a named experimental regime.

    * ``true``: the DGP's propensity, outcome means and CATE.
    * ``fitted``: known propensity, OLS pseudo-outcome CATE and marginal OLS outcome.
    * ``zero_mu``: known propensity, OLS pseudo-outcome CATE, outcome means set to 0.
    * ``wrong_mu``: known propensity, OLS pseudo-outcome CATE, a wrong outcome model.
    * ``wrong_tau``: known propensity, a fixed CATE with perturbed slopes, outcome 0.
    """
    t = sample.truth
    ols = RegressorSpec("ols")
    if mode == "true":
        return NuisanceLearners(propensity=t.e, cate=t.tau, outcome=t.mu)
    if mode == "fitted":
        return NuisanceLearners(propensity=t.e, cate="pseudo", outcome="marginal",
                                cate_regressor=ols, outcome_regressor=ols)
    if mode == "zero_mu":
        return NuisanceLearners(propensity=t.e, cate="pseudo", outcome="zero", cate_regressor=ols)
    if mode == "wrong_mu":
        return NuisanceLearners(propensity=t.e, cate="pseudo", outcome=wrong_outcome,
                                cate_regressor=ols)
    if mode == "wrong_tau":
        tau = LinearTau(perturbed_coefficients(spec.coefficients()))
        return NuisanceLearners(propensity=t.e, cate=tau, outcome="zero")
    raise InvalidInput(f"unknown nuisance mode {mode!r}; expected one of {NUISANCE_MODES}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Which estimator a coverage experiment runs and against which truth.

    ``variant`` is one of ``upper``, ``lb_mixture`` (uses ``b``),
    ``lb_variance`` (known constant ``sigma2``) or ``partial_id`` (mixture
    lower bound and upper bound, checked against the true ITE-CVaR).
    """

    variant: str = "upper"
    alpha: float = 0.25
    nuisance: str = "fitted"
    K: int = 5
    gamma: float = 0.9
    b: float | None = None
    sigma2: float | None = None

    def __post_init__(self):
        if self.variant not in ("upper", "lb_mixture", "lb_variance", "partial_id"):
            raise InvalidInput(f"unknown experiment variant {self.variant!r}")
        if self.nuisance not in NUISANCE_MODES:
            raise InvalidInput(f"unknown nuisance mode {self.nuisance!r}")
        check_alpha(self.alpha)


def experiment_truth(spec, config):
    if config.variant == "upper":
        return true_cate_cvar(spec, config.alpha)
    if config.variant == "lb_mixture":
        return true_mixture_bound(spec, config.alpha, _b_of(spec, config))
    if config.variant == "lb_variance":
        return true_variance_bound(spec, config.alpha, _sigma2_of(spec, config))
    return true_ite_cvar(spec, config.alpha)


def _b_of(spec, config):
    return spec.b if config.b is None else config.b


def _sigma2_of(spec, config):
    if config.sigma2 is not None:
        return config.sigma2
    if spec.kind == "bivariate_normal":
        return 2.0 - 2.0 * spec.rho
    if spec.kind == "linear_cate":
        return 2.0 * spec.noise ** 2
    return float(np.dot(spec.ite_offsets()[1], spec.ite_offsets()[0] ** 2))


def run_once(spec, config):
    """One replication: returns ``(psi_hat, se, ci_lo, ci_hi)``."""
    sample = generate(spec)
    data = sample.table
    nf = fit_nuisances(data, learners_for(config.nuisance, sample, spec), config.K, spec.seed)
    kw = {"gamma": config.gamma, "nuisance": nf}
    if config.variant == "upper":
        rep = estimate_cate_cvar(data, config.alpha, **kw)
    elif config.variant == "lb_mixture":
        rep = estimate_lower_bound_mixture(data, config.alpha, _b_of(spec, config), **kw)
    elif config.variant == "lb_variance":
        s2 = _sigma2_of(spec, config)
        rep = estimate_lower_bound_variance(data, config.alpha, sigma2=_constant_fn(s2), **kw)
    else:
        lower = estimate_lower_bound_mixture(data, config.alpha, _b_of(spec, config), **kw)
        upper = estimate_cate_cvar(data, config.alpha, **kw)
        lo, hi = partial_id_interval(lower, upper, config.gamma)
        return lower.psi_hat, lower.se, lo, hi
    return rep.psi_hat, rep.se, rep.ci[0], rep.ci[1]


@dataclass
class ExperimentSummary:
    reps: int
    failures: int
    truth: float
    coverage: float
    mean_bias: float
    median_abs_error: float
    median_width: float
    median_se: float
    validity_fraction: float
    within_3se_fraction: float
    records: list = field(default_factory=list, repr=False)

    def to_dict(self):
        out = asdict(self)
        out.pop("records")
        return out


def _nanmedian(values):
    values = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.median(values)) if values else math.nan


def coverage_experiment(spec, config, reps, master_seed=0):
    """Run ``config`` on ``reps`` independent datasets drawn from ``spec``.

    Replication ``r`` uses seed ``master_seed + r``. A replication that
    raises is recorded with its error message and excluded from the
    summaries.
    """
    if reps < 1:
        raise InvalidInput("reps must be positive")
    truth = experiment_truth(spec, config)
    records = []
    for r in range(reps):
        seed = master_seed + r
        rec = {"rep": r, "seed": seed, "truth": truth}
        try:
            psi, se, lo, hi = run_once(spec.with_seed(seed), config)
        except (InvalidInput, ArithmeticError, np.linalg.LinAlgError) as exc:
            rec["error"] = str(exc)
            records.append(rec)
            continue
        rec.update(psi_hat=psi, se=se, ci_lo=lo, ci_hi=hi,
                   covered=bool(lo <= truth <= hi),
                   valid=bool(psi >= truth - 2 * se),
                   within_3se=bool(abs(psi - truth) <= 3 * se))
        records.append(rec)
    ok = [r for r in records if "error" not in r]

    def frac(key):
        return float(np.mean([r[key] for r in ok])) if ok else math.nan

    return ExperimentSummary(
        reps=reps, failures=reps - len(ok), truth=truth,
        coverage=frac("covered"),
        mean_bias=float(np.mean([r["psi_hat"] - truth for r in ok])) if ok else math.nan,
        median_abs_error=_nanmedian([abs(r["psi_hat"] - truth) for r in ok]),
        median_width=_nanmedian([r["ci_hi"] - r["ci_lo"] for r in ok]),
        median_se=_nanmedian([r["se"] for r in ok]),
        validity_fraction=frac("valid"),
        within_3se_fraction=frac("within_3se"),
        records=records,
    )
