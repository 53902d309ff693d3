"""Replicate-level records and the four performance metrics.

A record counts toward an (estimator, domain) cell only when both its point
estimate and its MSE estimate are finite; the rest are tallied in
``n_excluded``.
"""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from ..errors import DegenerateMSE, ZeroTruth

RECORD_COLUMNS = ["rep_index", "estimator", "domain_id", "n_d", "estimate", "mse_hat",
                  "ci_low", "ci_high", "flags"]
KEY = ["estimator", "domain_id"]


def records_frame(results: Iterable) -> pd.DataFrame:
    """Build the long records table from ``(rep_index, DomainEstimates)`` pairs."""
    parts = []
    for rep_index, est in results:
        parts.append(pd.DataFrame({
            "rep_index": rep_index,
            "estimator": est.estimator,
            "domain_id": list(est.domains),
            "n_d": np.asarray(est.n, dtype=np.int64),
            "estimate": est.estimate,
            "mse_hat": est.mse_hat,
            "ci_low": est.ci_low,
            "ci_high": est.ci_high,
            "flags": est.flags,
        }))
    if not parts:
        return pd.DataFrame(columns=RECORD_COLUMNS)
    return pd.concat(parts, ignore_index=True)[RECORD_COLUMNS]


def _truth_series(truth) -> pd.Series:
    if isinstance(truth, pd.Series):
        return truth.astype(float)
    return pd.Series(dict(truth), dtype=float)


def _valid(records: pd.DataFrame, truth) -> pd.DataFrame:
    t = _truth_series(truth)
    ok = np.isfinite(records["estimate"]) & np.isfinite(records["mse_hat"])
    out = records.loc[ok & records["domain_id"].isin(t.index)].copy()
    out["truth"] = out["domain_id"].map(t).astype(float)
    return out


def relative_bias(records: pd.DataFrame, truth) -> pd.Series:
    v = _valid(records, truth)
    g = v.groupby(KEY, sort=True)
    mu = g["truth"].first()
    zero = mu[mu == 0]
    if len(zero):
        raise ZeroTruth(zero.index[0][1])
    return (g["estimate"].mean() - mu) / mu


def empirical_mse(records: pd.DataFrame, truth) -> pd.Series:
    v = _valid(records, truth)
    v["sq"] = (v["estimate"] - v["truth"]) ** 2
    return v.groupby(KEY, sort=True)["sq"].mean()


def mse_ratio(records: pd.DataFrame, truth) -> pd.Series:
    v = _valid(records, truth)
    mse = empirical_mse(records, truth)
    zero = mse[mse == 0]
    if len(zero):
        raise DegenerateMSE(zero.index[0])
    return v.groupby(KEY, sort=True)["mse_hat"].mean() / mse


def ci_coverage(records: pd.DataFrame, truth) -> pd.Series:
    v = _valid(records, truth)
    v["hit"] = (v["ci_low"] <= v["truth"]) & (v["truth"] <= v["ci_high"])
    return v.groupby(KEY, sort=True)["hit"].mean()


def compute_metrics(records: pd.DataFrame, truth, zero_proportion: Mapping | None = None) -> pd.DataFrame:
    """One row per (estimator, domain) with all four metrics.

    Undefined metrics (zero truth, zero empirical MSE) are left as NaN rather
    than raised, so one degenerate cell does not sink the table.
    """
    t = _truth_series(truth)
    v = _valid(records, truth)
    v["sq"] = (v["estimate"] - v["truth"]) ** 2
    v["hit"] = (v["ci_low"] <= v["truth"]) & (v["truth"] <= v["ci_high"])
    g = v.groupby(KEY, sort=True)
    out = pd.DataFrame({
        "K": g.size(),
        "truth": g["truth"].first(),
        "mean_estimate": g["estimate"].mean(),
        "sd_estimate": g["estimate"].std(ddof=1),
        "empirical_mse": g["sq"].mean(),
        "mean_mse_hat": g["mse_hat"].mean(),
        "coverage_95": g["hit"].mean(),
    })
    total = records[records["domain_id"].isin(t.index)].groupby(KEY, sort=True).size()
    out = out.reindex(total.index)
    out["K"] = out["K"].fillna(0).astype(np.int64)
    out["n_excluded"] = (total - out["K"]).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out["relative_bias"] = np.where(out["truth"] != 0,
                                        (out["mean_estimate"] - out["truth"]) / out["truth"], np.nan)
        out["mse_ratio"] = np.where(out["empirical_mse"] > 0,
                                    out["mean_mse_hat"] / out["empirical_mse"], np.nan)
        out["se_mean"] = out["sd_estimate"] / np.sqrt(out["K"])
    out = out.reset_index()
    if zero_proportion is not None:
        out["zero_proportion"] = out["domain_id"].map(dict(zero_proportion)).astype(float)
    else:
        out["zero_proportion"] = np.nan
    cols = ["estimator", "domain_id", "K", "n_excluded", "truth", "relative_bias", "empirical_mse",
            "mse_ratio", "coverage_95", "zero_proportion", "mean_estimate", "sd_estimate",
            "se_mean", "mean_mse_hat"]
    order = {e: i for i, e in enumerate(("ht", "greg", "fh", "bhf"))}
    out["_o"] = out["estimator"].map(lambda e: order.get(e, len(order)))
    dom_order = {d: i for i, d in enumerate(t.index)}
    out["_d"] = out["domain_id"].map(dom_order)
    return out.sort_values(["_o", "_d"]).reset_index(drop=True)[cols]


def zero_proportion(pop, variable: str) -> dict:
    """Share of population units whose ``variable`` equals 0, per domain."""
    y = pop.column(variable)
    df = pd.DataFrame({"d": pop.domain_id, "z": y == 0})
    return df.groupby("d")["z"].mean().to_dict()


def mse_ratio_slope(metrics: pd.DataFrame, estimator: str = "bhf") -> float:
    """Least-squares slope of MSE ratio on zero-valued share across domains."""
    m = metrics[(metrics["estimator"] == estimator)
                & np.isfinite(metrics["mse_ratio"]) & np.isfinite(metrics["zero_proportion"])]
    if len(m) < 2 or m["zero_proportion"].nunique() < 2:
        return float("nan")
    x = m["zero_proportion"].to_numpy()
    y = m["mse_ratio"].to_numpy()
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))
