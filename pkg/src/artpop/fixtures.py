"""Synthetic auxiliary/survey pairs drawn from a declared generative model.

Units sit in equal-size clusters laid out in contiguous domain blocks; a
share of the block-boundary clusters is split between two neighbouring
domains. Each auxiliary variable is a domain shift plus a small cluster
effect plus unit noise, pushed through a variable-specific marginal (some
skewed). Responses follow

    BA  = |b0 + s_stratum + x_std' b + v_d + sigma_d * e|
    VOL = BA * exp(a + 0.15 * e')

reflected at 0 so that BA > 0. Both are then set to 0 with domain-specific
probability ``pi_d``. The survey is one uniformly drawn in-scope unit per
cluster, so the fixture's true domain means come straight from the
generated responses.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import (
    AuxiliaryFrame,
    SurveyFrame,
    emit_auxiliary_frame,
    emit_survey_frame,
)

X_NAMES = ("tcc", "elev", "eastness", "northness", "tri", "tpi", "ppt", "tmin01")
Y_NAMES = ("BA", "VOL")


def _marginal(name, z):
    if name == "tcc":
        return 50.0 + 15.0 * z
    if name == "elev":
        return 1500.0 + 300.0 * z
    if name in ("eastness", "northness"):
        return np.tanh(0.5 * z)
    if name == "tri":
        return np.exp(0.6 * z)              # right-skewed, > 0
    if name == "tpi":
        return 2.0 * z
    if name == "ppt":
        return np.exp(6.0 + 0.3 * z)        # right-skewed
    if name == "tmin01":
        return 5.0 - np.exp(0.5 * z)        # left-skewed, < 5
    raise KeyError(name)


@dataclass(frozen=True)
class FixtureSpec:
    n_units: int = 100_000
    n_clusters: int = 500
    n_domains: int = 10
    n_strata: int = 2
    seed: int = 0
    first_stratum_share: float = 0.6
    straddle_share: float = 0.2             # of domain-boundary clusters
    domain_shift_sd: float = 1.2
    cluster_sd: float = 0.1
    intercept: float = 120.0
    stratum_shift: float = -30.0            # added per stratum index
    beta: tuple = (15.0, 5.0, 0.0, 0.0, 5.0, 0.0, 5.0, 0.0)
    sigma_v: float = 10.0
    sigma_e: tuple = (5.0, 80.0)            # range of per-domain noise SD
    vol_log_ratio: float = 2.0
    zero_share_max: float = 0.0
    out_of_scope_share: float = 0.0

    def __post_init__(self):
        for name in ("n_units", "n_clusters", "n_domains", "n_strata"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_units < self.n_clusters:
            raise ValueError("need at least one unit per cluster")
        if self.n_clusters < self.n_domains:
            raise ValueError("need at least one cluster per domain")
        for name in ("first_stratum_share", "straddle_share", "zero_share_max",
                     "out_of_scope_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if len(self.beta) != len(X_NAMES):
            raise ValueError(f"beta needs {len(X_NAMES)} coefficients")
        if self.sigma_v < 0 or min(self.sigma_e) < 0:
            raise ValueError("variance parameters must be >= 0")

    @classmethod
    def from_dict(cls, d) -> "FixtureSpec":
        d = dict(d or {})
        for key in ("beta", "sigma_e"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        d["sigma_e"] = list(self.sigma_e)
        return d


@dataclass(frozen=True, eq=False)
class Fixture:
    spec: FixtureSpec
    aux: AuxiliaryFrame
    survey: SurveyFrame
    y: np.ndarray                 # generated responses for every unit
    zero_share: np.ndarray        # pi_d per domain
    domain_sigma: np.ndarray      # sigma_d per domain
    extra: dict = field(default_factory=dict)

    @property
    def domains(self) -> list[str]:
        return [str(d + 1) for d in range(self.spec.n_domains)]

    def truth(self) -> pd.DataFrame:
        """Domain means of the generated responses over in-scope units."""
        keep = self.aux.in_scope
        df = pd.DataFrame(self.y[keep], columns=list(Y_NAMES))
        df.insert(0, "domain_id", self.aux.domain_id[keep])
        out = df.groupby("domain_id", sort=False).mean()
        return out.loc[[d for d in self.domains if d in out.index]].reset_index()


def make_fixture(spec: FixtureSpec) -> Fixture:
    rng = np.random.default_rng(spec.seed)
    N, C, D, S = spec.n_units, spec.n_clusters, spec.n_domains, spec.n_strata
    p = len(X_NAMES)

    # equal-size clusters (remainder spread over the first ones)
    sizes = np.full(C, N // C)
    sizes[: N % C] += 1
    cluster = np.repeat(np.arange(C), sizes)
    cdom = (np.arange(C) * D) // C
    dom = cdom[cluster].copy()
    # split some boundary clusters: their second half joins the next domain
    last = np.flatnonzero(np.diff(cdom) > 0)
    split = last[rng.random(len(last)) < spec.straddle_share]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    for c in split:
        a, b = starts[c], starts[c + 1]
        dom[a + (b - a) // 2: b] = cdom[c] + 1

    probs = np.full(S, (1.0 - spec.first_stratum_share) / max(S - 1, 1))
    probs[0] = spec.first_stratum_share if S > 1 else 1.0
    stratum = rng.choice(S, size=N, p=probs)

    shift = rng.normal(0.0, spec.domain_shift_sd, size=(D, p))
    ceff = rng.normal(0.0, spec.cluster_sd, size=(C, p))
    z = shift[dom] + ceff[cluster] + rng.normal(size=(N, p))
    x = np.column_stack([_marginal(n, z[:, j]) for j, n in enumerate(X_NAMES)])

    v = rng.normal(0.0, spec.sigma_v, size=D)
    sigma_d = rng.permutation(np.linspace(spec.sigma_e[0], spec.sigma_e[1], D))
    zs = (z - z.mean(axis=0)) / z.std(axis=0)
    eta = spec.intercept + spec.stratum_shift * stratum + zs @ np.asarray(spec.beta) + v[dom]
    ba = np.abs(eta + sigma_d[dom] * rng.normal(size=N))
    vol = ba * np.exp(spec.vol_log_ratio + 0.15 * rng.normal(size=N))
    pi = np.linspace(0.0, spec.zero_share_max, D)
    zero = rng.random(N) < pi[dom]
    ba[zero] = 0.0
    vol[zero] = 0.0
    y = np.column_stack([ba, vol])

    in_scope = np.ones(N, dtype=bool)
    if spec.out_of_scope_share > 0:
        in_scope = rng.random(N) >= spec.out_of_scope_share
        # keep every cluster sampleable
        for c in np.flatnonzero(np.bincount(cluster, weights=in_scope, minlength=C) == 0):
            in_scope[starts[c]] = True

    unit_id = np.arange(1, N + 1, dtype=np.int64)
    dom_lbl = np.array([str(d + 1) for d in dom], dtype=object)
    str_lbl = np.array([str(s + 1) for s in stratum], dtype=object)
    aux = AuxiliaryFrame(unit_id, (cluster + 1).astype(np.int64), dom_lbl, str_lbl,
                         in_scope, x, X_NAMES, {"fixture_seed": str(spec.seed)})

    # one in-scope unit per cluster
    chosen = []
    for c in range(C):
        rows = np.arange(starts[c], starts[c + 1])
        rows = rows[in_scope[rows]]
        chosen.append(rows[rng.integers(len(rows))])
    chosen = np.array(chosen, dtype=np.int64)
    survey = SurveyFrame(unit_id[chosen], dom_lbl[chosen], str_lbl[chosen], x[chosen],
                         X_NAMES, y[chosen], Y_NAMES, {"fixture_seed": str(spec.seed)})
    return Fixture(spec, aux, survey, y, pi, sigma_d, extra={"split_clusters": (split + 1).tolist()})


def write_fixture(fixture: Fixture, directory) -> dict:
    """Emit auxiliary, survey, full generated responses and domain truth."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "auxiliary": d / "auxiliary.csv",
        "survey": d / "survey.csv",
        "responses": d / "generated_responses.csv",
        "truth": d / "fixture_truth.csv",
    }
    emit_auxiliary_frame(fixture.aux, paths["auxiliary"])
    emit_survey_frame(fixture.survey, paths["survey"])
    resp = pd.DataFrame(fixture.y, columns=list(Y_NAMES))
    resp.insert(0, "domain_id", fixture.aux.domain_id)
    resp.insert(0, "unit_id", fixture.aux.unit_id)
    resp.insert(2, "in_scope", fixture.aux.in_scope.astype(int))
    resp.to_csv(paths["responses"], index=False, lineterminator="\n", float_format=repr)
    fixture.truth().to_csv(paths["truth"], index=False, lineterminator="\n", float_format=repr)
    return paths
