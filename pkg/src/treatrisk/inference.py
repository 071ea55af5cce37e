"""Debiased, cross-fitted estimation of CATE-CVaR and of the ITE-CVaR bounds.

Every estimator follows the same recipe. Nuisances are cross-fitted (see
``treatrisk.nuisance.fit_nuisances``). Each fold gets a threshold ``beta``
computed from the CATE estimate on its training rows, and its held-out rows
are scored. The point estimate is the mean score and the standard error is
``sqrt(sum((phi - mean)^2) / (n (n - 1)))``. The variants differ only in
the threshold step and in the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .bounds import maximize_variance_bound, mixture_sample, variance_from_outcomes
from .errors import InternalError, InvalidInput
from .nuisance import fit_nuisances, ipw_weight
from .risk_core import check_alpha, empirical_quantile, rearrange_monotone, RiskCurve

MIN_TAIL_COUNT = 10
DEFAULT_GAMMA = 0.9
DEFAULT_K = 5
CORRECTIONS = ("derived", "unscaled", "none")


def z_value(gamma):
    if not 0.0 < gamma < 1.0:
        raise InvalidInput(f"gamma must lie in (0, 1), got {gamma!r}")
    return float(stats.norm.ppf((1.0 + gamma) / 2.0))


@dataclass
class EstimateReport:
    """Point estimate, standard error and two-sided ``gamma`` interval."""

    variant: str
    alpha: float | tuple
    psi_hat: float
    se: float
    gamma: float
    ci: tuple
    n: int
    K: int
    seed: int
    fingerprint: str
    metadata: dict = field(default_factory=dict)
    phi: np.ndarray = field(default=None, repr=False, compare=False)

    def shifted(self, delta, variant=None):
        """The same report with the estimate and interval moved by ``delta``."""
        return replace(
            self, psi_hat=self.psi_hat + delta,
            ci=(self.ci[0] + delta, self.ci[1] + delta),
            variant=variant or self.variant,
            phi=None if self.phi is None else self.phi + delta,
        )

    def negated(self, variant=None):
        return replace(
            self, psi_hat=-self.psi_hat, ci=(-self.ci[1], -self.ci[0]),
            variant=variant or self.variant,
            phi=None if self.phi is None else -self.phi,
        )

    def to_dict(self):
        alpha = list(self.alpha) if isinstance(self.alpha, tuple) else self.alpha
        return {
            "variant": self.variant, "alpha": alpha, "psi_hat": self.psi_hat,
            "se": self.se, "gamma": self.gamma, "ci_lo": self.ci[0], "ci_hi": self.ci[1],
            "n": self.n, "K": self.K, "seed": self.seed, "metadata": self.metadata,
        }


def check_tail_size(n, alpha):
    if n * alpha < MIN_TAIL_COUNT:
        raise InvalidInput(
            f"alpha too small for n: n*alpha = {n * alpha:g} < {MIN_TAIL_COUNT}")


def phi_scores(a, y, e, mu0, mu1, tau, beta, alpha, clip=None):
    """Debiased CVaR scores for a block of rows sharing one threshold ``beta``.

    ``beta + 1{tau <= beta} (mu1 - mu0 + (a - e)/(e(1 - e)) (y - mu_a) - beta) / alpha``.
    At ``alpha == 1`` the indicator is identically one, giving the
    doubly-robust ATE score.
    """
    e = np.asarray(e, dtype=float)
    lo = clip if clip is not None else 0.0
    if np.any(e < lo) or np.any(e > 1.0 - lo) or np.any((e <= 0) | (e >= 1)):
        raise InternalError("propensity outside the clipping range reached the score")
    mua = np.where(np.asarray(a) == 1, mu1, mu0)
    dr = mu1 - mu0 + ipw_weight(a, e) * (y - mua)
    if alpha == 1.0:
        return dr
    inside = np.asarray(tau) <= beta
    return beta + inside * (dr - beta) / alpha


def phi_score(a, y, e, mu0, mu1, tau, beta, alpha, clip=None):
    """Score of a single observation; see ``phi_scores``."""
    return float(phi_scores(np.array([a], dtype=float), np.array([y], dtype=float),
                            np.array([e], dtype=float), np.array([mu0], dtype=float),
                            np.array([mu1], dtype=float), np.array([tau], dtype=float),
                            beta, alpha, clip)[0])


def _resolve(data, nuisance, learners, K, seed, fold_mode):
    if nuisance is None:
        return fit_nuisances(data, learners, K, seed, fold_mode)
    if nuisance.fingerprint != data.fingerprint():
        raise InvalidInput("nuisance fit was computed on different data")
    return nuisance


def _fold_arrays(data, fold):
    te = fold.test_idx
    return data.a[te], data.y[te]


def _upper_scores(data, fit, alpha, clip, beta=None):
    phi = np.empty(data.n)
    betas = []
    for fold in fit.folds:
        b = empirical_quantile(fold.tau_train, alpha) if beta is None else float(beta)
        a, y = _fold_arrays(data, fold)
        phi[fold.test_idx] = phi_scores(a, y, fold.e, fold.mu0, fold.mu1, fold.tau, b, alpha, clip)
        betas.append(b)
    return phi, betas


def _report(phi, variant, alpha, gamma, fit, **meta):
    n = phi.shape[0]
    psi = float(np.mean(phi))
    se = float(math.sqrt(np.sum((phi - psi) ** 2) / (n * (n - 1))))
    half = z_value(gamma) * se
    metadata = {"learners": fit.learners, "fold_mode": fit.plan.mode, **fit.metadata}
    metadata.update(meta)
    return EstimateReport(
        variant=variant, alpha=alpha, psi_hat=psi, se=se, gamma=gamma,
        ci=(psi - half, psi + half), n=n, K=fit.K, seed=fit.seed,
        fingerprint=fit.fingerprint, metadata=metadata, phi=phi,
    )


def _clip_of(fit):
    return fit.learners.get("clip")


def estimate_cate_cvar(data, alpha, *, gamma=DEFAULT_GAMMA, K=DEFAULT_K, learners=None,
                       seed=0, fold_mode="shuffled", nuisance=None, beta=None):
    """Point estimate and ``gamma`` confidence interval for CVaR_alpha(CATE).

    Parameters
    ----------
    data : ObservationTable
    alpha : float
        Level in (0, 1]; ``n * alpha`` must be at least 10.
    gamma : float
        Confidence level of the two-sided interval.
    K, learners, seed, fold_mode :
        Passed to ``fit_nuisances`` when ``nuisance`` is not given.
    nuisance : NuisanceFit, optional
        Precomputed cross-fit to reuse.
    beta : float, optional
        Use this threshold in every fold instead of the out-of-fold quantile.

    Returns
    -------
    EstimateReport
    """
    alpha = check_alpha(alpha)
    check_tail_size(data.n, alpha)
    fit = _resolve(data, nuisance, learners, K, seed, fold_mode)
    phi, betas = _upper_scores(data, fit, alpha, _clip_of(fit), beta)
    return _report(phi, "upper", alpha, gamma, fit, beta=betas)


def estimate_level_difference(data, alpha_lo, alpha_hi, *, gamma=DEFAULT_GAMMA, K=DEFAULT_K,
                              learners=None, seed=0, fold_mode="shuffled", nuisance=None):
    """Estimate of ``CVaR_{alpha_hi}(CATE) - CVaR_{alpha_lo}(CATE)``.

    Both levels share every nuisance except the thresholds, so the interval
    reflects their correlation; with ``alpha_hi = 1`` the target is
    ATE minus CVaR.
    """
    alpha_lo = check_alpha(alpha_lo, "alpha_lo")
    alpha_hi = check_alpha(alpha_hi, "alpha_hi")
    if alpha_lo > alpha_hi:
        raise InvalidInput("alpha_lo must not exceed alpha_hi")
    check_tail_size(data.n, alpha_lo)
    fit = _resolve(data, nuisance, learners, K, seed, fold_mode)
    phi_lo, _ = _upper_scores(data, fit, alpha_lo, _clip_of(fit))
    phi_hi, _ = _upper_scores(data, fit, alpha_hi, _clip_of(fit))
    return _report(phi_hi - phi_lo, "diff", (alpha_lo, alpha_hi), gamma, fit)


def interquantile_weights(alpha_lo, alpha_hi):
    """Weights ``(a'/(a' - a), a/(a' - a))`` on the two CVaR scores."""
    width = alpha_hi - alpha_lo
    return alpha_hi / width, alpha_lo / width


def estimate_interquantile(data, alpha_lo, alpha_hi, *, gamma=DEFAULT_GAMMA, K=DEFAULT_K,
                           learners=None, seed=0, fold_mode="shuffled", nuisance=None):
    """Average effect among units with CATE between its alpha_lo and alpha_hi quantiles."""
    alpha_lo = check_alpha(alpha_lo, "alpha_lo")
    alpha_hi = check_alpha(alpha_hi, "alpha_hi")
    if alpha_lo >= alpha_hi:
        raise InvalidInput("alpha_lo must be strictly below alpha_hi")
    check_tail_size(data.n, alpha_lo)
    fit = _resolve(data, nuisance, learners, K, seed, fold_mode)
    w_hi, w_lo = interquantile_weights(alpha_lo, alpha_hi)
    phi_lo, _ = _upper_scores(data, fit, alpha_lo, _clip_of(fit))
    phi_hi, _ = _upper_scores(data, fit, alpha_hi, _clip_of(fit))
    return _report(w_hi * phi_hi - w_lo * phi_lo, "interquantile", (alpha_lo, alpha_hi), gamma, fit)


def rmse_slack(alpha, rmse0, rmse1):
    """``(rmse0 + rmse1) / (2 alpha)``, the loosest slack constant."""
    alpha = check_alpha(alpha)
    return (float(rmse0) + float(rmse1)) / (2.0 * alpha)


def estimate_lower_bound_shift(data, alpha, constant, *, gamma=DEFAULT_GAMMA, K=DEFAULT_K,
                               learners=None, seed=0, fold_mode="shuffled", nuisance=None):
    """CATE-CVaR estimate minus a known constant.

    Use ``constant=b`` for the one-sided range bound, or ``rmse_slack(...)``
    for the RMSE-based bound.
    """
    constant = float(constant)
    if not math.isfinite(constant):
        raise InvalidInput("shift constant must be finite")
    rep = estimate_cate_cvar(data, alpha, gamma=gamma, K=K, learners=learners, seed=seed,
                             fold_mode=fold_mode, nuisance=nuisance)
    out = rep.shifted(-constant, variant="lb_shift")
    out.metadata = {**rep.metadata, "shift": constant}
    return out


def estimate_lower_bound_mixture(data, alpha, b, *, gamma=DEFAULT_GAMMA, K=DEFAULT_K,
                                 learners=None, seed=0, fold_mode="shuffled", nuisance=None):
    """Lower bound assuming ``|CATE - ITE| <= b``: CVaR of the ``CATE +- b`` mixture."""
    alpha = check_alpha(alpha)
    b = float(b)
    if not (b >= 0 and math.isfinite(b)):
        raise InvalidInput("b must be finite and nonnegative")
    check_tail_size(data.n, alpha)
    fit = _resolve(data, nuisance, learners, K, seed, fold_mode)
    clip = _clip_of(fit)
    phi = np.empty(data.n)
    betas = []
    for fold in fit.folds:
        z, w = mixture_sample(fold.tau_train, b)
        beta = empirical_quantile(z, alpha, w)
        a, y = _fold_arrays(data, fold)
        plus = phi_scores(a, y, fold.e, fold.mu0, fold.mu1, fold.tau, beta + b, alpha, clip)
        minus = phi_scores(a, y, fold.e, fold.mu0, fold.mu1, fold.tau, beta - b, alpha, clip)
        phi[fold.test_idx] = 0.5 * (plus + minus)
        betas.append(beta)
    return _report(phi, "lb_mixture", alpha, gamma, fit, b=b, beta=betas)


def _sigma2_for(fold, x, which, sigma2, rho):
    if sigma2 is not None:
        s2 = np.asarray(sigma2(x), dtype=float)
    else:
        v0 = fold.var0_train if which == "train" else fold.var0
        v1 = fold.var1_train if which == "train" else fold.var1
        if v0 is None:
            raise InvalidInput("variance bound needs sigma2 or a variance nuisance with rho")
        s2 = variance_from_outcomes(v0, v1, rho)
    s2 = np.broadcast_to(s2, (x.shape[0],)).astype(float)
    if not np.all(np.isfinite(s2)) or np.any(s2 < 0):
        raise InvalidInput("sigma2 must be finite and nonnegative")
    return s2


def _variance_correction(a, y, e, mua, var0, var1, root, rho, alpha, kind):
    """Score term for the estimation error of fitted arm variances."""
    vara = np.where(a == 1, var1, var0)
    varo = np.where(a == 1, var0, var1)
    vara_safe = np.maximum(vara, 1e-12)
    ipw = a / e + (1 - a) / (1 - e)
    resid_sq = y ** 2 - vara - mua ** 2 - 2 * mua * (y - mua)
    if kind == "unscaled":
        # variance ratio instead of sd ratio, and no 1/(2 alpha) factor
        ratio = np.where(a == 1, var0 / vara_safe, var1 / vara_safe)
        return -0.5 * (1 - rho * ratio) / root * ipw * resid_sq
    # derivative of the score in sigma2(X, A) times that variance's influence term
    ratio = np.sqrt(varo / vara_safe)
    return -(1 - rho * ratio) / (4 * alpha * root) * ipw * resid_sq


def estimate_lower_bound_variance(data, alpha, *, sigma2=None, rho=None, correction="derived",
                                  gamma=DEFAULT_GAMMA, K=DEFAULT_K, learners=None, seed=0,
                                  fold_mode="shuffled", nuisance=None):
    """Lower bound assuming ``Var(ITE | X) <= sigma2(X)``.

    Parameters
    ----------
    sigma2 : callable, optional
        Known bound ``x -> sigma2(x)``. When omitted the bound is built from
        the arm variances of the nuisance fit and the correlation ``rho``.
    rho : float, optional
        Assumed conditional correlation of the potential outcomes; ``-1`` is
        assumption-free.
    correction : {"derived", "unscaled", "none"}
        Extra score term used when the arm variances are fitted rather than
        known. ``"derived"`` (default) differentiates the score in each arm
        variance and gives calibrated intervals in simulation. ``"unscaled"``
        is a variant without the ``1 / (2 alpha)`` factor that understates the standard
        error; it is kept for comparison.
    """
    alpha = check_alpha(alpha)
    if correction not in CORRECTIONS:
        raise InvalidInput(f"correction must be one of {CORRECTIONS}")
    if sigma2 is None:
        if rho is None:
            raise InvalidInput("give either sigma2 or rho")
        if not -1.0 <= rho <= 1.0:
            raise InvalidInput("rho must lie in [-1, 1]")
    check_tail_size(data.n, alpha)
    fit = _resolve(data, nuisance, learners, K, seed, fold_mode)
    clip = _clip_of(fit)
    corrected = sigma2 is None and fit.variance_fitted and correction != "none"
    phi = np.empty(data.n)
    betas = []
    for fold in fit.folds:
        x_tr = data.x[fold.train_idx]
        x_te = data.x[fold.test_idx]
        s2_tr = _sigma2_for(fold, x_tr, "train", sigma2, rho)
        s2_te = _sigma2_for(fold, x_te, "test", sigma2, rho)
        beta, _ = maximize_variance_bound(fold.tau_train, s2_tr, alpha)
        a, y = _fold_arrays(data, fold)
        e = fold.e
        if np.any(e < clip) or np.any(e > 1 - clip):
            raise InternalError("propensity outside the clipping range reached the score")
        mua = np.where(a == 1, fold.mu1, fold.mu0)
        resid = ipw_weight(a, e) * (y - mua)
        if alpha == 1.0:
            phi[fold.test_idx] = fold.tau + resid
            betas.append(None)
            continue
        u = fold.tau - beta
        root = np.sqrt(u * u + s2_te)
        safe = np.where(root > 0, root, 1.0)
        hyp = np.where(u > 0, -s2_te / np.where(u > 0, u + root, 1.0), u - root)
        slope = np.where(root > 0, 1.0 - u / safe, np.where(u < 0, 2.0, 0.0))
        f = beta + hyp / (2 * alpha) + slope / (2 * alpha) * resid
        if corrected:
            f = f + _variance_correction(a, y, e, mua, fold.var0, fold.var1, safe,
                                         rho, alpha, correction)
        phi[fold.test_idx] = f
        betas.append(beta)
    return _report(phi, "lb_variance", alpha, gamma, fit, rho=rho,
                   sigma2="known" if sigma2 is not None else "arm_variances",
                   correction=correction if corrected else "none", beta=betas)


def partial_id_interval(lower, upper, gamma=None):
    """Union-bound interval for ITE-CVaR from a lower- and an upper-bound report.

    Each side is a one-sided ``(1 + gamma) / 2`` limit, so the interval
    covers with probability at least ``gamma`` (conservatively).
    """
    if lower.n != upper.n or lower.fingerprint != upper.fingerprint:
        raise InvalidInput("lower and upper reports come from different data")
    gamma = lower.gamma if gamma is None else gamma
    z = z_value(gamma)
    return lower.psi_hat - z * lower.se, upper.psi_hat + z * upper.se


@dataclass
class SubgroupProfile:
    """Who is in the estimated worst-affected alpha-fraction."""

    alpha: float
    mask: np.ndarray
    mean_in: np.ndarray
    mean_out: np.ndarray

    @property
    def fraction(self):
        return float(self.mask.mean())


def subgroup_profile(data, nuisance, alpha):
    """Membership ``tau_hat(X_i) <= beta_hat`` using the fold that owns row i."""
    alpha = check_alpha(alpha)
    mask = np.zeros(data.n, dtype=bool)
    for fold in nuisance.folds:
        if alpha == 1.0:
            mask[fold.test_idx] = True
        else:
            beta = empirical_quantile(fold.tau_train, alpha)
            mask[fold.test_idx] = fold.tau <= beta
    nan = np.full(data.d, np.nan)
    mean_in = data.x[mask].mean(axis=0) if mask.any() else nan
    mean_out = data.x[~mask].mean(axis=0) if (~mask).any() else nan
    return SubgroupProfile(alpha, mask, mean_in, mean_out)


def rearranged_estimates(alphas, reports):
    """Point estimates sorted ascending over the alpha grid; intervals are untouched."""
    curve = RiskCurve(np.asarray(alphas, dtype=float), [r.psi_hat for r in reports])
    return rearrange_monotone(curve).values
