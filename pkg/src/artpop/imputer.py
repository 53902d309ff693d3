"""Artificial population generation by ranked-neighbour hot-deck donation.

Three donor-selection rules share one code path and differ only in the
probability attached to each neighbour rank:

* ``kbaabb``: bootstrap-inclusion weights, rank j drawn with probability
  ``(1 - e^-1) e^-(j-1)``; the last rank takes whatever mass is left.
* ``uniform_knn``: every one of the k neighbours equally likely.
* ``single_nn``: always the nearest neighbour (k = 1).

Every in-scope recipient takes *all* response columns from the single donor
that was drawn.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .datamodel import ArtificialPopulation, AuxiliaryFrame, SurveyFrame, sorted_labels
from .errors import LengthMismatch, TooFewDonors
from .knn import build_index, query_knn
from .preprocess import ScalingConstants, apply_scaling, apply_transforms, fit_scaling, matching_matrix

METHODS = ("kbaabb", "uniform_knn", "single_nn")
BOOTSTRAP_INCLUSION = 1.0 - math.exp(-1.0)


@dataclass(frozen=True, eq=False)
class SelectionWeights:
    k: int
    w: np.ndarray

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.w)
        c[-1] = 1.0
        return c


def selection_weights(k: int, method: str = "kbaabb") -> SelectionWeights:
    if k < 1:
        raise ValueError("k must be >= 1")
    if method == "kbaabb":
        head = [BOOTSTRAP_INCLUSION * math.exp(-(j - 1)) for j in range(1, k)]
    elif method == "uniform_knn":
        head = [1.0 / k] * (k - 1)
    elif method == "single_nn":
        if k != 1:
            raise ValueError("single_nn requires k = 1")
        head = []
    else:
        raise ValueError(f"unknown method {method!r}")
    w = np.array(head + [1.0 - math.fsum(head)])
    return SelectionWeights(k, w)


@dataclass(frozen=True)
class ImputationConfig:
    method: str = "kbaabb"
    k: int = 10
    master_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "single_nn" and self.k != 1:
            raise ValueError("single_nn requires k = 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def weights(self) -> SelectionWeights:
        return selection_weights(self.k, self.method)


def sample_ranks(u, weights: SelectionWeights) -> np.ndarray:
    """Map uniforms to 1-based neighbour ranks by inverting the weight CDF."""
    r = np.searchsorted(weights.cdf, np.asarray(u), side="right")
    return np.minimum(r, weights.k - 1) + 1


def select_donor(neighbor_ids, weights: SelectionWeights, u) -> tuple[int, int]:
    """Pick one donor from a ranked pool.

    ``u`` is a uniform draw, or a ``numpy.random.Generator`` to draw it from.
    """
    neighbor_ids = np.asarray(neighbor_ids)
    if len(neighbor_ids) != weights.k:
        raise LengthMismatch(f"{len(neighbor_ids)} neighbours for {weights.k} weights")
    if isinstance(u, np.random.Generator):
        u = u.random()
    rank = int(sample_ranks(u, weights))
    return int(neighbor_ids[rank - 1]), rank


def generate_population(
    aux: AuxiliaryFrame,
    survey: SurveyFrame,
    cfg: ImputationConfig,
    scaling: ScalingConstants | None = None,
    transforms=(),
    variables=None,
    workers: int = 1,
    retain_neighbors: bool = False,
) -> ArtificialPopulation:
    """Impute responses to every in-scope auxiliary unit, stratum by stratum.

    Matching uses ``variables`` (default: every auxiliary column) after the
    skew ``transforms``; the result keeps the untransformed auxiliary values.
    When ``scaling`` is None it is fitted on the transformed population.
    """
    variables = tuple(variables or aux.x_names)
    aux_t = apply_transforms(aux, transforms)
    survey_t = apply_transforms(survey, transforms)
    if scaling is None:
        scaling = fit_scaling(aux_t, variables)
    rows = np.flatnonzero(aux.in_scope)
    aux_s = apply_scaling(aux_t.subset(rows), scaling)
    # donor strata that never occur among recipients are simply unused
    survey_s = apply_scaling(_restrict_strata(survey_t, set(aux_s.stratum.tolist())), scaling)
    R = matching_matrix(aux_s, variables)
    D = matching_matrix(survey_s, variables)

    weights = cfg.weights
    k = cfg.k
    n = len(rows)
    donor_id = np.empty(n, dtype=np.int64)
    donor_rank = np.empty(n, dtype=np.int64)
    neighbors = np.empty((n, k), dtype=np.int64) if retain_neighbors else None
    u = rngmod.uniforms(cfg.master_seed, "impute", aux_s.unit_id)
    ranks = sample_ranks(u, weights)

    for s in sorted_labels(aux_s.stratum.tolist()):
        rec = np.flatnonzero(aux_s.stratum == s)
        don = np.flatnonzero(survey_s.stratum == s)
        if len(don) < k:
            raise TooFewDonors(len(don), k, s)
        index = build_index(D[don], survey_s.plot_id[don], k=k, stratum=s)
        nl = query_knn(index, R[rec], k, workers=workers)
        donor_rank[rec] = ranks[rec]
        donor_id[rec] = nl.donor_ids[np.arange(len(rec)), ranks[rec] - 1]
        if retain_neighbors:
            neighbors[rec] = nl.donor_ids

    plot_row = {int(p): i for i, p in enumerate(survey.plot_id)}
    y = survey.y[[plot_row[int(d)] for d in donor_id]] if n else np.empty((0, survey.y.shape[1]))
    provenance = {
        "method": cfg.method,
        "k": str(k),
        "seed": str(cfg.master_seed),
    }
    return ArtificialPopulation(
        unit_id=aux.unit_id[rows], cluster_id=aux.cluster_id[rows],
        domain_id=aux.domain_id[rows], stratum=aux.stratum[rows],
        x=aux.x[rows], x_names=aux.x_names, y=y, y_names=survey.y_names,
        donor_id=donor_id, donor_rank=donor_rank, neighbors=neighbors,
        provenance=provenance,
    )


def _restrict_strata(frame, strata):
    keep = np.isin(frame.stratum, list(strata))
    return replace(frame, plot_id=frame.plot_id[keep], domain_id=frame.domain_id[keep],
                   stratum=frame.stratum[keep], x=frame.x[keep], y=frame.y[keep])


def population_metadata(pop: ArtificialPopulation, cfg: ImputationConfig, **extra) -> dict:
    meta = {
        "method": cfg.method,
        "k": cfg.k,
        "master_seed": cfg.master_seed,
        "weights": [repr(float(v)) for v in cfg.weights.w],
        "n_units": len(pop),
        "y_columns": list(pop.y_names),
    }
    meta.update(extra)
    return meta


@dataclass(frozen=True, eq=False)
class DomainTruth:
    domains: tuple[str, ...]
    variables: tuple[str, ...]
    means: np.ndarray  # (n_domains, n_variables)
    counts: np.ndarray = field(default=None)

    def mean(self, domain: str, variable: str) -> float:
        return float(self.means[self.domains.index(domain), self.variables.index(variable)])

    def as_dict(self, variable: str) -> dict:
        j = self.variables.index(variable)
        return {d: float(self.means[i, j]) for i, d in enumerate(self.domains)}


def domain_truth(pop: ArtificialPopulation) -> DomainTruth:
    """Per-domain arithmetic means of every imputed response."""
    domains = tuple(sorted_labels(pop.domain_id.tolist()))
    lookup = {d: i for i, d in enumerate(domains)}
    g = np.array([lookup[d] for d in pop.domain_id], dtype=np.int64)
    counts = np.bincount(g, minlength=len(domains))
    means = np.empty((len(domains), len(pop.y_names)))
    for j in range(len(pop.y_names)):
        means[:, j] = np.bincount(g, weights=pop.y[:, j], minlength=len(domains)) / counts
    return DomainTruth(domains, pop.y_names, means, counts)
