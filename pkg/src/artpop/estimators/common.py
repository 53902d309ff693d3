from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..datamodel import ArtificialPopulation, sorted_labels

CI_MULTIPLIER = 1.96

# record flags
DOMAIN_TOO_SMALL = "domain_too_small"
NO_SAMPLE = "no_sample"
OUT_OF_SAMPLE = "out_of_sample"
FALLBACK = "nonconvergence_fallback"


@dataclass(frozen=True, eq=False)
class PopulationMoments:
    """Domain sizes and population means of the estimator covariates."""

    domains: tuple[str, ...]
    variables: tuple[str, ...]
    N: np.ndarray          # (D,)
    xbar: np.ndarray       # (D, p), no intercept column

    def index(self, domain_labels) -> np.ndarray:
        lookup = {d: i for i, d in enumerate(self.domains)}
        return np.array([lookup[d] for d in domain_labels], dtype=np.int64)

    def design(self) -> np.ndarray:
        """Domain means with a leading intercept column."""
        return np.column_stack([np.ones(len(self.domains)), self.xbar])


def population_moments(pop: ArtificialPopulation, variables: Sequence[str]) -> PopulationMoments:
    domains = tuple(sorted_labels(pop.domain_id.tolist()))
    lookup = {d: i for i, d in enumerate(domains)}
    g = np.array([lookup[d] for d in pop.domain_id], dtype=np.int64)
    N = np.bincount(g, minlength=len(domains))
    xbar = np.empty((len(domains), len(variables)))
    for j, v in enumerate(variables):
        xbar[:, j] = np.bincount(g, weights=pop.column(v), minlength=len(domains)) / N
    return PopulationMoments(domains, tuple(variables), N.astype(np.int64), xbar)


@dataclass(frozen=True)
class EstimateRecord:
    estimator: str
    domain_id: str
    rep_index: int
    n_d: int
    estimate: float
    mse_hat: float
    ci_low: float
    ci_high: float
    flags: str = ""


@dataclass(frozen=True, eq=False)
class DomainEstimates:
    """One estimator's output for every population domain in one replicate.

    ``extras`` carries method internals useful for checks (shrinkage factors,
    direct and synthetic components).
    """

    estimator: str
    domains: tuple[str, ...]
    n: np.ndarray
    estimate: np.ndarray
    mse_hat: np.ndarray
    flags: list
    extras: dict = field(default_factory=dict)

    @property
    def ci_low(self) -> np.ndarray:
        return self.estimate - CI_MULTIPLIER * np.sqrt(self.mse_hat)

    @property
    def ci_high(self) -> np.ndarray:
        return self.estimate + CI_MULTIPLIER * np.sqrt(self.mse_hat)

    def records(self, rep_index: int = 0) -> list[EstimateRecord]:
        lo, hi = self.ci_low, self.ci_high
        return [
            EstimateRecord(self.estimator, d, rep_index, int(self.n[i]), float(self.estimate[i]),
                           float(self.mse_hat[i]), float(lo[i]), float(hi[i]), self.flags[i])
            for i, d in enumerate(self.domains)
        ]


@dataclass(frozen=True, eq=False)
class MixedModelFit:
    beta: np.ndarray
    sigma2_v: float
    sigma2_e: float = float("nan")
    iterations: int = 0
    converged: bool = True
    method: str = "reml"
    cov_variance: np.ndarray | None = None   # asymptotic covariance of the variance estimates
    cov_beta: np.ndarray | None = None


def domain_groups(domain_labels, moments: PopulationMoments):
    g = moments.index(domain_labels)
    n = np.bincount(g, minlength=len(moments.domains))
    return g, n


def group_means(values, g, n):
    """Per-domain means of ``values`` (1-d or 2-d along axis 0); NaN where n = 0."""
    values = np.asarray(values, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        if values.ndim == 1:
            return np.bincount(g, weights=values, minlength=len(n)) / n
        return np.column_stack([
            np.bincount(g, weights=values[:, j], minlength=len(n)) / n
            for j in range(values.shape[1])
        ]) if values.shape[1] else np.empty((len(n), 0))


def group_variances(values, g, n):
    """Per-domain sample variances (n - 1 divisor); NaN where n < 2."""
    mean = group_means(values, g, n)
    dev = values - mean[g]
    ss = np.bincount(g, weights=dev * dev, minlength=len(n))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n >= 2, ss / np.maximum(n - 1, 1), np.nan)
