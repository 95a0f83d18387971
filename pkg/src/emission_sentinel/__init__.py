"""Bayesian detection and localisation of a small, weak emission source in a
unit-disk object from direction-sensitive detector data."""

from emission_sentinel.model import (
    Observation,
    ObservationSet,
    ParameterState,
    PriorSpec,
    ballistic_indicator,
    hit_count,
    log_likelihood_m1,
    log_likelihood_m2,
    log_posterior_unnorm,
)

__version__ = "0.1.0"

__all__ = [
    "Observation",
    "ObservationSet",
    "ParameterState",
    "PriorSpec",
    "ballistic_indicator",
    "hit_count",
    "log_likelihood_m1",
    "log_likelihood_m2",
    "log_posterior_unnorm",
]
