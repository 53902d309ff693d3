"""Small-area estimators evaluated in the simulation studies."""
from .common import (
    CI_MULTIPLIER,
    DomainEstimates,
    EstimateRecord,
    MixedModelFit,
    PopulationMoments,
    population_moments,
)
from .direct import greg_estimate, ht_estimate
from .fay_herriot import fh_estimate
from .nested_error import bhf_estimate

ESTIMATORS = ("ht", "greg", "fh", "bhf")

__all__ = [
    "CI_MULTIPLIER",
    "DomainEstimates",
    "EstimateRecord",
    "ESTIMATORS",
    "MixedModelFit",
    "PopulationMoments",
    "bhf_estimate",
    "fh_estimate",
    "greg_estimate",
    "ht_estimate",
    "population_moments",
    "run_estimators",
]


def run_estimators(y, X, domain, moments, which=ESTIMATORS) -> tuple[dict, dict]:
    """All requested estimators on one replicate sample.

    FH is built on the HT direct estimates and variances of the same sample.
    Returns ``(results, failures)``: estimates keyed by name in
    ``ESTIMATORS`` order, and a message for each estimator that raised.
    """
    fits = {
        "greg": lambda: greg_estimate(y, X, domain, moments),
        "fh": lambda: fh_estimate(ht, moments)[0],
        "bhf": lambda: bhf_estimate(y, X, domain, moments)[0],
    }
    results, failures = {}, {}
    ht = ht_estimate(y, domain, moments)
    for name in ESTIMATORS:
        if name not in which:
            continue
        if name == "ht":
            results[name] = ht
            continue
        try:
            results[name] = fits[name]()
        except ValueError as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
    return results, failures
