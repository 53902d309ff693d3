"""Design-based estimators: the domain sample mean (Horvitz-Thompson under
equal inclusion probabilities) and a GREG with one regression fitted on the
whole replicate sample.

Both use the with-replacement variance approximation ``s^2 / n_d``; the
sampling fractions involved are tiny, so no finite-population correction.
"""
from __future__ import annotations

import numpy as np

from ..errors import RankDeficientDesign
from .common import (
    DOMAIN_TOO_SMALL,
    NO_SAMPLE,
    DomainEstimates,
    PopulationMoments,
    domain_groups,
    group_means,
    group_variances,
)


def _flags(n):
    return [NO_SAMPLE if k == 0 else DOMAIN_TOO_SMALL if k == 1 else "" for k in n]


def ht_estimate(y, domain, moments: PopulationMoments) -> DomainEstimates:
    y = np.asarray(y, dtype=float)
    g, n = domain_groups(domain, moments)
    est = group_means(y, g, n)
    mse = group_variances(y, g, n) / n
    return DomainEstimates("ht", moments.domains, n, est, mse, _flags(n))


def fit_ols(X, y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientDesign(f"design of shape {X.shape} is rank deficient")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def greg_estimate(y, X, domain, moments: PopulationMoments) -> DomainEstimates:
    """estimate_d = Xbar_d' b + mean of residuals in d, b pooled OLS with intercept."""
    y = np.asarray(y, dtype=float)
    Xs = np.column_stack([np.ones(len(y)), np.asarray(X, dtype=float).reshape(len(y), -1)])
    beta = fit_ols(Xs, y)
    resid = y - Xs @ beta
    g, n = domain_groups(domain, moments)
    synthetic = moments.design() @ beta
    est = synthetic + group_means(resid, g, n)
    mse = group_variances(resid, g, n) / n
    return DomainEstimates("greg", moments.domains, n, est, mse, _flags(n),
                           extras={"beta": beta, "synthetic": synthetic})
