"""Replicate samples under a one-unit-per-cluster design.

Each cluster offers ``m_c`` in-scope units plus ``o_c`` declared
out-of-scope slots. One slot is drawn uniformly; drawing an out-of-scope
slot leaves the cluster unrepresented in that replicate. The draw for cluster
``c`` in replicate ``r`` depends only on ``(master_seed, r, c)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import rng as rngmod
from .datamodel import ArtificialPopulation, sorted_labels
from .errors import EmptyCluster


@dataclass(frozen=True)
class DesignSpec:
    replicates: int = 2500
    master_seed: int = 0
    out_of_scope_slots: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if any(v < 0 for v in self.out_of_scope_slots.values()):
            raise ValueError("out-of-scope slot counts must be >= 0")


@dataclass(frozen=True, eq=False)
class SampleReplicate:
    rep_index: int
    selected: np.ndarray        # unit ids, ascending cluster order
    rows: np.ndarray            # positions of ``selected`` in the population
    n_by_domain: dict

    def __len__(self):
        return len(self.selected)


@dataclass(frozen=True, eq=False)
class ClusterLayout:
    """Population units grouped by cluster, each group sorted by unit id."""

    cluster_ids: np.ndarray
    offsets: np.ndarray         # group c is rows[offsets[c]:offsets[c+1]]
    rows: np.ndarray
    in_scope: np.ndarray        # m_c
    out_slots: np.ndarray       # o_c

    @classmethod
    def build(cls, pop: ArtificialPopulation, design: DesignSpec) -> "ClusterLayout":
        extra = {int(c): int(v) for c, v in design.out_of_scope_slots.items()}
        cids = np.union1d(np.unique(pop.cluster_id), np.array(sorted(extra), dtype=np.int64))
        order = np.lexsort((pop.unit_id, pop.cluster_id))
        sorted_c = pop.cluster_id[order]
        starts = np.searchsorted(sorted_c, cids, side="left")
        ends = np.searchsorted(sorted_c, cids, side="right")
        m = ends - starts
        o = np.array([extra.get(int(c), 0) for c in cids], dtype=np.int64)
        empty = np.flatnonzero(m + o == 0)
        if len(empty):
            raise EmptyCluster(int(cids[empty[0]]))
        offsets = np.concatenate([starts, ends[-1:]]) if len(cids) else np.zeros(1, np.int64)
        return cls(cids, offsets, order, m, o)


def draw_replicate(pop: ArtificialPopulation, design: DesignSpec, rep_index: int,
                   layout: ClusterLayout | None = None) -> SampleReplicate:
    layout = layout or ClusterLayout.build(pop, design)
    total = layout.in_scope + layout.out_slots
    u = rngmod.uniforms(design.master_seed, "sample", layout.cluster_ids, draw=rep_index)
    slot = np.minimum(np.floor(u * total).astype(np.int64), total - 1)
    hit = slot < layout.in_scope
    rows = layout.rows[layout.offsets[:-1][hit] + slot[hit]]
    domains, counts = np.unique(pop.domain_id[rows], return_counts=True)
    n_by_domain = {d: int(n) for d, n in zip(domains.tolist(), counts.tolist())}
    return SampleReplicate(rep_index, pop.unit_id[rows], rows, n_by_domain)


def draw_replicates(pop: ArtificialPopulation, design: DesignSpec,
                    start: int = 1) -> Iterator[SampleReplicate]:
    """Replicates ``start .. design.replicates``; each is reproducible alone."""
    layout = ClusterLayout.build(pop, design)
    for r in range(start, design.replicates + 1):
        yield draw_replicate(pop, design, r, layout)


def expected_domain_sizes(pop: ArtificialPopulation, design: DesignSpec) -> dict:
    """E[n_d] = sum over clusters of (units of d in c) / (slots of c)."""
    layout = ClusterLayout.build(pop, design)
    total = (layout.in_scope + layout.out_slots).astype(float)
    out = {d: 0.0 for d in sorted_labels(pop.domain_id.tolist())}
    for c in range(len(layout.cluster_ids)):
        rows = layout.rows[layout.offsets[c]:layout.offsets[c + 1]]
        doms, counts = np.unique(pop.domain_id[rows], return_counts=True)
        for d, n in zip(doms.tolist(), counts.tolist()):
            out[d] += n / total[c]
    return out


def replicates_table(replicates) -> tuple[np.ndarray, np.ndarray]:
    """Flatten to parallel (rep_index, unit_id) columns for CSV output."""
    reps, units = [], []
    for rep in replicates:
        reps.append(np.full(len(rep), rep.rep_index, dtype=np.int64))
        units.append(rep.selected)
    if not reps:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(reps), np.concatenate(units)
