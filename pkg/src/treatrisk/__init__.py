"""Estimation and bounds for the conditional value at risk of treatment effects."""

from .errors import DegenerateDesignWarning, InternalError, InvalidInput
from .risk_core import (
    RiskCurve, empirical_cvar, empirical_quantile, normal_cvar, quantile_and_cvar,
    rearrange_monotone,
)
from .bounds import (
    corollary_slack_bounds, dte_cvar_binary, interquantile_average, lower_bound_one_sided_range,
    lower_bound_two_sided_range, lower_bound_variance, upper_bound_cate_cvar,
    variance_from_outcomes,
)
from .nuisance import NuisanceLearners, ObservationTable, fit_nuisances, make_fold_plan
from .regressors import RegressorSpec
from .inference import (
    EstimateReport, estimate_cate_cvar, estimate_interquantile, estimate_level_difference,
    estimate_lower_bound_mixture, estimate_lower_bound_shift, estimate_lower_bound_variance,
    partial_id_interval, phi_score, phi_scores, subgroup_profile,
)

__version__ = "0.1.0"
