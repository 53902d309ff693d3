"""Artificial-population synthesis and design-based small-area simulation."""
from .datamodel import (
    ArtificialPopulation,
    AuxiliaryFrame,
    Schema,
    SurveyFrame,
    load_auxiliary_frame,
    load_population,
    load_survey_frame,
)
from .imputer import ImputationConfig, domain_truth, generate_population, selection_weights
from .sampler import DesignSpec, draw_replicate, draw_replicates

__version__ = "0.1.0"

__all__ = [
    "ArtificialPopulation",
    "AuxiliaryFrame",
    "DesignSpec",
    "ImputationConfig",
    "Schema",
    "SurveyFrame",
    "domain_truth",
    "draw_replicate",
    "draw_replicates",
    "generate_population",
    "load_auxiliary_frame",
    "load_population",
    "load_survey_frame",
    "selection_weights",
]
