"""Unit-level EBLUP under the nested-error regression model

    y_di = x_di' beta + v_d + e_di,   v_d ~ (0, s2v),  e_di ~ (0, s2e)

Variance components come from REML via Fisher scoring (s2v truncated at 0).
The Henderson method III moment estimates seed the iterations and stand in
for REML when scoring does not converge. Point predictions of domain means
ignore the finite-population correction; MSE is Prasad-Rao g1 + g2 + 2 g3.
"""
from __future__ import annotations

import numpy as np

from ..errors import RankDeficientDesign, TooFewDomains
from .common import (
    FALLBACK,
    OUT_OF_SAMPLE,
    DomainEstimates,
    MixedModelFit,
    PopulationMoments,
    domain_groups,
    group_means,
)

TOL = 1e-8
MAX_ITER = 200


class _Structure:
    """Sample layout reused across scoring iterations."""

    def __init__(self, X, g):
        self.X = X
        self.g = g
        self.n, self.p = X.shape
        self.m = int(g.max()) + 1
        self.nd = np.bincount(g, minlength=self.m).astype(float)
        self.Z = np.zeros((self.n, self.m))
        self.Z[np.arange(self.n), g] = 1.0
        self.same = g[:, None] == g[None, :]

    def v_inverse(self, s2v, s2e):
        # (s2e I + s2v J)^-1 = I / s2e - s2v / (s2e (s2e + n s2v)) J, blockwise
        c = s2v / (s2e * (s2e + self.nd * s2v))
        Vi = np.where(self.same, -c[self.g][:, None], 0.0)
        Vi[np.diag_indices(self.n)] += 1.0 / s2e
        return Vi

    def projection(self, s2v, s2e):
        Vi = self.v_inverse(s2v, s2e)
        A = Vi @ self.X
        M = np.linalg.inv(self.X.T @ A)
        return Vi - A @ M @ A.T, Vi, M

    def score_info(self, y, s2v, s2e):
        P, _, _ = self.projection(s2v, s2e)
        Py = P @ y
        PZ = P @ self.Z
        ZPZ = self.Z.T @ PZ
        ZPy = self.Z.T @ Py
        score = 0.5 * np.array([
            -np.trace(ZPZ) + ZPy @ ZPy,
            -np.trace(P) + Py @ Py,
        ])
        info = 0.5 * np.array([
            [np.sum(ZPZ * ZPZ), np.sum(PZ * PZ)],
            [np.sum(PZ * PZ), np.sum(P * P)],
        ])
        return score, info


def henderson3(y, X, g) -> tuple[float, float]:
    """Fitting-of-constants estimates (s2v truncated at 0). ``X`` has an intercept."""
    n, p = X.shape
    m = int(g.max()) + 1
    nd = np.bincount(g, minlength=m).astype(float)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    sse_ols = r @ r
    yc = y - (np.bincount(g, weights=y, minlength=m) / nd)[g]
    Xw = X[:, 1:]
    Xc = Xw - np.column_stack([np.bincount(g, weights=Xw[:, j], minlength=m) / nd
                               for j in range(Xw.shape[1])])[g] if Xw.shape[1] else Xw
    if Xc.shape[1]:
        b, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
        rw = yc - Xc @ b
        rank = np.linalg.matrix_rank(Xc)
    else:
        rw, rank = yc, 0
    df_w = n - m - rank
    s2e = (rw @ rw) / df_w if df_w > 0 else sse_ols / (n - p)
    xbar = np.column_stack([np.bincount(g, weights=X[:, j], minlength=m) / nd for j in range(p)])
    n_star = n - np.trace(np.linalg.inv(X.T @ X) @ (xbar.T * nd ** 2) @ xbar)
    s2v = max(0.0, (sse_ols - (n - p) * s2e) / n_star)
    return s2v, s2e


def fit_reml(y, X, g, tol: float = TOL, max_iter: int = MAX_ITER) -> MixedModelFit:
    """REML for (s2v, s2e). ``g`` holds compact domain indices 0..m-1."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientDesign(f"design of shape {X.shape} is rank deficient")
    st = _Structure(X, g)
    h_v, h_e = henderson3(y, X, g)
    theta = np.array([h_v, h_e])
    if theta[1] <= 0:
        theta[1] = float(np.var(y)) or 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score, info = st.score_info(y, *theta)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            break
        new = theta + step
        new[0] = max(new[0], 0.0)
        if new[1] <= 0:
            new[1] = theta[1] / 10.0
        delta = np.abs(new - theta)
        theta = new
        scale = np.maximum(np.abs(theta), delta)
        if np.all((delta == 0) | (delta <= tol * scale)):
            converged = True
            break
    method = "reml"
    if not converged:
        theta = np.array([h_v, max(h_e, np.finfo(float).tiny)])
        method = "henderson3"
    s2v, s2e = float(theta[0]), float(theta[1])
    _, info = st.score_info(y, s2v, s2e)
    _, Vi, M = st.projection(s2v, s2e)
    beta = M @ (X.T @ (Vi @ y))
    try:
        cov_var = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov_var = np.full((2, 2), np.nan)
    return MixedModelFit(beta, s2v, s2e, iterations=it, converged=converged, method=method,
                         cov_variance=cov_var, cov_beta=M)


def bhf_estimate(y, X, domain, moments: PopulationMoments,
                 tol: float = TOL, max_iter: int = MAX_ITER):
    """Domain-mean EBLUPs for every population domain.

    Unsampled domains receive the synthetic ``Xbar_d' beta`` (shrinkage 0)
    and the ``out_of_sample`` flag.
    """
    y = np.asarray(y, dtype=float)
    Xs = np.column_stack([np.ones(len(y)), np.asarray(X, dtype=float).reshape(len(y), -1)])
    g_all, n = domain_groups(domain, moments)
    sampled = n >= 1
    p = Xs.shape[1]
    if sampled.sum() < 2:
        raise TooFewDomains("need at least 2 sampled domains")
    if len(y) < p + 2:
        raise TooFewDomains(f"{len(y)} sample units, need {p + 2}")
    compact = np.cumsum(sampled) - 1
    fit = fit_reml(y, Xs, compact[g_all], tol=tol, max_iter=max_iter)
    s2v, s2e = fit.sigma2_v, fit.sigma2_e
    M = fit.cov_beta
    V = fit.cov_variance

    Xbar = moments.design()
    synthetic = Xbar @ fit.beta
    ybar = group_means(y, g_all, n)
    xbar = group_means(Xs, g_all, n)
    D = len(moments.domains)
    gamma = np.zeros(D)
    est = synthetic.copy()
    mse = s2v + np.einsum("ij,jk,ik->i", Xbar, M, Xbar)
    direct = np.full(D, np.nan)

    ns = n[sampled].astype(float)
    gam = s2v / (s2v + s2e / ns)
    gamma[sampled] = gam
    direct[sampled] = ybar[sampled] + (Xbar[sampled] - xbar[sampled]) @ fit.beta
    est[sampled] = synthetic[sampled] + gam * (ybar[sampled] - xbar[sampled] @ fit.beta)
    g1 = gam * s2e / ns
    a = Xbar[sampled] - gam[:, None] * xbar[sampled]
    g2 = np.einsum("ij,jk,ik->i", a, M, a)
    h = s2e ** 2 * V[0, 0] + s2v ** 2 * V[1, 1] - 2.0 * s2e * s2v * V[0, 1]
    g3 = ns ** -2.0 * (s2v + s2e / ns) ** -3.0 * h
    mse[sampled] = g1 + g2 + 2.0 * g3

    base = FALLBACK if not fit.converged else ""
    flags = []
    for i in range(D):
        f = [base] if base else []
        if not sampled[i]:
            f.append(OUT_OF_SAMPLE)
        flags.append(";".join(f))
    result = DomainEstimates("bhf", moments.domains, n, est, mse, flags,
                             extras={"gamma": gamma, "direct": direct, "synthetic": synthetic})
    return result, fit
