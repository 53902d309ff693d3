"""Checks on a generated population against the donor sample it came from:
marginal eCDFs, per-domain spread, donor usage and donor/recipient domain
cross-tabulation.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..datamodel import ArtificialPopulation, SurveyFrame, sorted_labels
from ..errors import MissingVariable, ProvenanceMissing


def ecdf_table(values) -> pd.DataFrame:
    v = np.sort(np.asarray(values, dtype=float))
    uniq, idx = np.unique(v, return_index=True)
    # position of the last copy of each value, +1, over n
    last = np.append(idx[1:], len(v))
    return pd.DataFrame({"value": uniq, "cum_prop": last / len(v)})


def ks_from_tables(a: pd.DataFrame, b: pd.DataFrame) -> float:
    """Sup distance between two step eCDFs given as (value, cum_prop) tables."""
    grid = np.union1d(a["value"].to_numpy(), b["value"].to_numpy())

    def at(t, x):
        i = np.searchsorted(t["value"].to_numpy(), x, side="right") - 1
        return np.where(i >= 0, t["cum_prop"].to_numpy()[np.maximum(i, 0)], 0.0)

    return float(np.max(np.abs(at(a, grid) - at(b, grid))))


@dataclass(frozen=True, eq=False)
class MarginalComparison:
    variable: str
    original: pd.DataFrame
    imputed: pd.DataFrame

    @property
    def ks(self) -> float:
        return ks_from_tables(self.original, self.imputed)

    def long(self) -> pd.DataFrame:
        return pd.concat([self.original.assign(source="original"),
                          self.imputed.assign(source="imputed")], ignore_index=True)[
            ["source", "value", "cum_prop"]]


def _require(frame, variable):
    if variable not in frame.y_names:
        raise MissingVariable(variable)


def diag_marginals(survey: SurveyFrame, pop: ArtificialPopulation, variable: str) -> MarginalComparison:
    _require(survey, variable)
    _require(pop, variable)
    return MarginalComparison(variable, ecdf_table(survey.column(variable)),
                              ecdf_table(pop.column(variable)))


@dataclass(frozen=True, eq=False)
class DomainSpread:
    variable: str
    table: pd.DataFrame       # domain_id, n_survey, sd_original, sd_imputed
    correlation: float


def diag_domain_sd(survey: SurveyFrame, pop: ArtificialPopulation, variable: str) -> DomainSpread:
    """Per-domain SDs in the sample (n-1 divisor) and the population (n divisor)."""
    _require(survey, variable)
    _require(pop, variable)
    s = pd.DataFrame({"d": survey.domain_id, "y": survey.column(variable)}).groupby("d")["y"]
    p = pd.DataFrame({"d": pop.domain_id, "y": pop.column(variable)}).groupby("d")["y"]
    table = pd.DataFrame({"n_survey": s.size(), "sd_original": s.std(ddof=1)})
    table["sd_imputed"] = p.std(ddof=0)
    table = table[(table["n_survey"] >= 2) & table["sd_imputed"].notna()]
    table = table.loc[[d for d in sorted_labels(table.index.tolist())]]
    table.index.name = "domain_id"
    table = table.reset_index()
    corr = float("nan")
    if len(table) >= 2 and table["sd_original"].std() > 0 and table["sd_imputed"].std() > 0:
        corr = float(np.corrcoef(table["sd_original"], table["sd_imputed"])[0, 1])
    return DomainSpread(variable, table, corr)


def _check_provenance(pop):
    if pop.donor_id is None or len(pop.donor_id) != len(pop):
        raise ProvenanceMissing("population has no donor ids")


@dataclass(frozen=True, eq=False)
class DonorUsage:
    table: pd.DataFrame       # plot_id, stratum, pool_count, use_count
    never_in_pool: list
    in_pool_never_used: list
    never_used: list


def diag_donor_usage(pop: ArtificialPopulation, survey: SurveyFrame) -> DonorUsage:
    """How often each donor sat in some recipient's pool and how often it was chosen.

    Pool counts need the retained neighbour lists; without them the column
    is missing (NA) and the pool-based lists are empty.
    """
    _check_provenance(pop)
    ids = survey.plot_id
    pos = {int(p): i for i, p in enumerate(ids)}
    use = np.bincount([pos[int(d)] for d in pop.donor_id], minlength=len(ids))
    table = pd.DataFrame({"plot_id": ids, "stratum": survey.stratum, "use_count": use})
    if pop.neighbors is not None:
        flat = pop.neighbors.ravel()
        pool = np.bincount([pos[int(d)] for d in flat], minlength=len(ids))
        table.insert(2, "pool_count", pool)
        never_in_pool = ids[pool == 0].tolist()
        in_pool_never_used = ids[(pool > 0) & (use == 0)].tolist()
    else:
        table.insert(2, "pool_count", pd.array([pd.NA] * len(ids), dtype="Int64"))
        never_in_pool, in_pool_never_used = [], []
    return DonorUsage(table, never_in_pool, in_pool_never_used, ids[use == 0].tolist())


@dataclass(frozen=True, eq=False)
class DonorCrosstab:
    table: pd.DataFrame       # rows donor domain, columns recipient domain
    same_domain_share: float


def diag_donor_crosstab(pop: ArtificialPopulation, survey: SurveyFrame) -> DonorCrosstab:
    _check_provenance(pop)
    dom = dict(zip(survey.plot_id.tolist(), survey.domain_id.tolist()))
    donor_dom = [dom[int(d)] for d in pop.donor_id]
    labels = sorted_labels(set(donor_dom) | set(pop.domain_id.tolist()))
    table = pd.crosstab(pd.Categorical(donor_dom, categories=labels),
                        pd.Categorical(pop.domain_id, categories=labels), dropna=False)
    table.index.name = "donor_domain"
    table.columns.name = "recipient_domain"
    total = int(table.to_numpy().sum())
    share = float(np.trace(table.to_numpy()) / total) if total else float("nan")
    return DonorCrosstab(table, share)


@dataclass(frozen=True, eq=False)
class DiagnosticsBundle:
    marginals: dict
    spreads: dict
    usage: DonorUsage
    crosstab: DonorCrosstab

    def summary(self) -> dict:
        return {
            "ks": {v: m.ks for v, m in self.marginals.items()},
            "sd_correlation": {v: s.correlation for v, s in self.spreads.items()},
            "same_domain_share": self.crosstab.same_domain_share,
            "never_used_donors": len(self.usage.never_used),
            "never_in_pool_donors": len(self.usage.never_in_pool),
            "in_pool_never_used_donors": len(self.usage.in_pool_never_used),
        }

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for v, m in self.marginals.items():
            written.append(d / f"ecdf_{v}.csv")
            m.long().to_csv(written[-1], index=False, lineterminator="\n")
        for v, s in self.spreads.items():
            written.append(d / f"domain_sd_{v}.csv")
            s.table.to_csv(written[-1], index=False, lineterminator="\n")
        written.append(d / "donor_usage.csv")
        self.usage.table.to_csv(written[-1], index=False, lineterminator="\n")
        written.append(d / "donor_crosstab.csv")
        self.crosstab.table.to_csv(written[-1], lineterminator="\n")
        return written


def diagnose(survey: SurveyFrame, pop: ArtificialPopulation, variables=None) -> DiagnosticsBundle:
    variables = list(variables or pop.y_names)
    return DiagnosticsBundle(
        marginals={v: diag_marginals(survey, pop, v) for v in variables},
        spreads={v: diag_domain_sd(survey, pop, v) for v in variables},
        usage=diag_donor_usage(pop, survey),
        crosstab=diag_donor_crosstab(pop, survey),
    )
