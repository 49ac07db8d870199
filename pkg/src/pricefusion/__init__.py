"""Hierarchical Bayesian price optimisation fusing purchase history and conjoint data."""
from .model import (
    TRUE_PARAMETERS,
    Customer,
    Demographics,
    ModelVariant,
    Observation,
    ObservationSet,
    ParameterVector,
    PriorConfig,
    linear_predictor,
    log_likelihood,
    log_prior,
    purchase_probability,
    reference_price,
)
from .posterior import LogPosterior, ParameterLayout, log_posterior_and_gradient

__version__ = "0.1.0"

__all__ = [
    "TRUE_PARAMETERS", "Customer", "Demographics", "LogPosterior", "ModelVariant", "Observation",
    "ObservationSet", "ParameterLayout", "ParameterVector", "PriorConfig", "linear_predictor",
    "log_likelihood", "log_posterior_and_gradient", "log_prior", "purchase_probability", "reference_price",
    "__version__",
]
