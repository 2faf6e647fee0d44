"""Bayesian structural time-series engine: components, filtering, MCMC."""

from .components import (
    ComponentSpec,
    SeasonalLayout,
    SpikeSlabSettings,
    StateSpaceModel,
    TrendPriors,
    VariancePrior,
    assemble_model,
    circadian_seasonal,
    day_seasonal,
    meal_seasonal,
    regression,
    seasonal,
    semi_local_trend,
    specs_from_json,
)
from .kalman import FilterResult, ParamPoint, ffbs_sample, forecast_path, kalman_loglik
from .spike_slab import RegressionSettings, exact_inclusion_posterior, sample_regression
from .sampler import ForecastResult, PosteriorDraws, forecast_anchors, mcmc_fit, posterior_forecast

__all__ = [
    "ComponentSpec",
    "FilterResult",
    "ForecastResult",
    "ParamPoint",
    "PosteriorDraws",
    "RegressionSettings",
    "SeasonalLayout",
    "SpikeSlabSettings",
    "StateSpaceModel",
    "TrendPriors",
    "VariancePrior",
    "assemble_model",
    "circadian_seasonal",
    "day_seasonal",
    "exact_inclusion_posterior",
    "ffbs_sample",
    "forecast_anchors",
    "forecast_path",
    "kalman_loglik",
    "mcmc_fit",
    "meal_seasonal",
    "posterior_forecast",
    "regression",
    "sample_regression",
    "seasonal",
    "semi_local_trend",
    "specs_from_json",
]
