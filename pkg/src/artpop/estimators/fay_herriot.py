"""Area-level EBLUP (Fay-Herriot model).

    direct_d = Xbar_d' beta + v_d + e_d,   v_d ~ (0, s2v),  e_d ~ (0, psi_d)

``s2v`` is fitted by REML with Fisher scoring and truncated at zero. If
scoring fails to converge, the Prasad-Rao moment estimator is used instead
and every record is flagged. MSE is the Prasad-Rao ``g1 + g2 + 2 g3``.
"""
from __future__ import annotations

import numpy as np

from ..errors import TooFewDomains
from .common import (
    FALLBACK,
    OUT_OF_SAMPLE,
    DomainEstimates,
    MixedModelFit,
    PopulationMoments,
)

TOL = 1e-8
MAX_ITER = 200


def _gls(y, X, V):
    Vi = 1.0 / V
    XtViX = X.T @ (X * Vi[:, None])
    cov_beta = np.linalg.inv(XtViX)
    beta = cov_beta @ (X.T @ (Vi * y))
    return beta, cov_beta


def _projection(X, V):
    """REML projection P = V^-1 - V^-1 X (X'V^-1X)^-1 X'V^-1 for diagonal V."""
    Vi = 1.0 / V
    A = X * Vi[:, None]
    M = np.linalg.inv(X.T @ A)
    return np.diag(Vi) - A @ M @ A.T


def moment_estimate(y, X, psi) -> float:
    """Prasad-Rao moment estimator from OLS residuals, truncated at 0."""
    m, p = X.shape
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    h = np.einsum("ij,jk,ik->i", X, np.linalg.inv(X.T @ X), X)
    return max(0.0, (r @ r - np.sum(psi * (1.0 - h))) / (m - p))


def fit_reml(y, X, psi, tol: float = TOL, max_iter: int = MAX_ITER) -> MixedModelFit:
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float)
    s2 = float(np.median(psi))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        P = _projection(X, s2 + psi)
        Py = P @ y
        score = -0.5 * np.trace(P) + 0.5 * (Py @ Py)
        info = 0.5 * np.sum(P * P)
        new = max(0.0, s2 + score / info)
        step = abs(new - s2)
        s2 = new
        if step <= tol * max(s2, step) or step == 0.0:
            converged = True
            break
    method = "reml"
    if converged:
        var_s2 = 2.0 / np.sum((s2 + psi) ** -2.0)
    else:
        s2 = moment_estimate(y, X, psi)
        method = "moments"
        var_s2 = 2.0 * np.sum((s2 + psi) ** 2) / len(y) ** 2
    beta, cov_beta = _gls(y, X, s2 + psi)
    return MixedModelFit(beta, s2, iterations=it, converged=converged, method=method,
                         cov_variance=np.array([[var_s2]]), cov_beta=cov_beta)


def fh_estimate(direct: DomainEstimates, moments: PopulationMoments,
                tol: float = TOL, max_iter: int = MAX_ITER):
    """EBLUP per domain from direct estimates and their variances.

    Domains lacking a usable direct estimate (n_d < 2 or zero variance) get
    the synthetic prediction and the ``out_of_sample`` flag.
    """
    Xall = moments.design()
    D, p = Xall.shape
    psi_all = np.asarray(direct.mse_hat, dtype=float)
    y_all = np.asarray(direct.estimate, dtype=float)
    valid = (np.asarray(direct.n) >= 2) & np.isfinite(psi_all) & (psi_all > 0) & np.isfinite(y_all)
    m = int(valid.sum())
    if m < p + 2:
        raise TooFewDomains(f"{m} domains with direct estimates, need {p + 2}")
    X, y, psi = Xall[valid], y_all[valid], psi_all[valid]
    fit = fit_reml(y, X, psi, tol=tol, max_iter=max_iter)
    s2 = fit.sigma2_v
    var_s2 = fit.cov_variance[0, 0]

    synthetic = Xall @ fit.beta
    q = np.einsum("ij,jk,ik->i", Xall, fit.cov_beta, Xall)   # x' (X'V^-1X)^-1 x
    gamma = np.zeros(D)
    est = synthetic.copy()
    mse = s2 + q
    with np.errstate(invalid="ignore", divide="ignore"):
        g = s2 / (s2 + psi)
    gamma[valid] = g
    est[valid] = g * y + (1.0 - g) * synthetic[valid]
    g1 = g * psi
    g2 = (1.0 - g) ** 2 * q[valid]
    g3 = psi ** 2 * (s2 + psi) ** -3.0 * var_s2
    mse[valid] = g1 + g2 + 2.0 * g3

    base = FALLBACK if not fit.converged else ""
    flags = []
    for i in range(D):
        f = [base] if base else []
        if not valid[i]:
            f.append(OUT_OF_SAMPLE)
        flags.append(";".join(f))
    result = DomainEstimates("fh", moments.domains, np.asarray(direct.n), est, mse, flags,
                             extras={"gamma": gamma, "direct": y_all, "synthetic": synthetic,
                                     "psi": psi_all, "valid": valid})
    return result, fit
