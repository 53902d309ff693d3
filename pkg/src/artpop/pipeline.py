"""Stage runner: inputs -> generate -> sample -> estimate -> evaluate -> diagnose.

Every stage reads its predecessor's files, so any stage can be rerun alone.
A stage is skipped when its cache key (a hash of the config sections it
depends on, chained with the upstream key) matches the one recorded in
``stages.json`` and its outputs are still on disk. Timings go to
``timings.json`` so ``summary.json`` stays byte-stable across reruns.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .config import RunConfig, check_columns
from .datamodel import (
    ArtificialPopulation,
    Schema,
    _read_rows,
    emit_auxiliary_frame,
    emit_population,
    emit_survey_frame,
    emit_table,
    load_auxiliary_frame,
    load_population,
    load_survey_frame,
    load_table,
    validate_cross_frames,
)
from .errors import ArtpopError, ConfigError, ProvenanceMissing, SchemaValidationError
from .estimators import ESTIMATORS, population_moments, run_estimators
from .estimators.common import CI_MULTIPLIER
from .evaluation import compute_metrics, diagnose, mse_ratio_slope, records_frame, zero_proportion
from .evaluation.metrics import RECORD_COLUMNS
from .fixtures import X_NAMES, Y_NAMES, make_fixture, write_fixture
from .imputer import ImputationConfig, domain_truth, generate_population, population_metadata
from .preprocess import apply_transforms, fit_scaling
from .sampler import ClusterLayout, DesignSpec, draw_replicate

log = logging.getLogger(__name__)

STAGES = ("inputs", "generate", "sample", "estimate", "evaluate", "diagnose")
# config sections each stage depends on (beyond its upstream stage)
STAGE_SECTIONS = {
    "inputs": ("inputs", "schema", "fixture"),
    "generate": ("transforms", "matching_variables", "imputation", "diagnostics"),
    "sample": ("design",),
    "estimate": ("estimation",),
    "evaluate": (),
    "diagnose": ("diagnostics",),
}
FAILURE_MARKER = "FAILED"
ESTIMATOR_FAILED = "estimator_failed"


class StageError(ArtpopError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


@dataclass
class RunPaths:
    root: Path

    def __getattr__(self, name):
        names = {
            "auxiliary": "inputs/auxiliary.csv",
            "survey": "inputs/survey.csv",
            "population": "population.csv",
            "population_meta": "population.meta.json",
            "scaling": "scaling.json",
            "neighbors": "neighbors.csv",
            "truth": "truth.csv",
            "replicates": "replicates.csv",
            "estimates": "estimates.csv",
            "metrics": "metrics.csv",
            "diagnostics": "diagnostics",
            "summary": "summary.json",
            "timings": "timings.json",
            "stages": "stages.json",
            "failure": FAILURE_MARKER,
        }
        if name not in names:
            raise AttributeError(name)
        return self.root / names[name]


@dataclass
class Pipeline:
    cfg: RunConfig
    workers: int = 1
    force: bool = False
    timings: dict = field(default_factory=dict)
    _keys: dict = field(default_factory=dict)

    def __post_init__(self):
        self.paths = RunPaths(Path(self.cfg.output))
        self.provenance = {"config_sha256": self.cfg.config_hash}

    # -- cache bookkeeping ---------------------------------------------------------

    def stage_key(self, stage: str) -> str:
        if stage not in self._keys:
            i = STAGES.index(stage)
            upstream = self.stage_key(STAGES[i - 1]) if i else ""
            h = hashlib.sha256((upstream + self.cfg.section_hash(*STAGE_SECTIONS[stage])).encode())
            self._keys[stage] = h.hexdigest()
        return self._keys[stage]

    def _recorded(self) -> dict:
        try:
            return json.loads(self.paths.stages.read_text())
        except (OSError, ValueError):
            return {}

    def _outputs(self, stage) -> list[Path]:
        p = self.paths
        out = {
            "inputs": [p.auxiliary, p.survey],
            "generate": [p.population, p.population_meta, p.scaling, p.truth],
            "sample": [p.replicates],
            "estimate": [p.estimates],
            "evaluate": [p.metrics],
            "diagnose": [p.diagnostics],
        }[stage]
        if stage == "generate" and self.cfg.diagnostics.retain_neighbor_lists:
            out.append(p.neighbors)
        return out

    def cached(self, stage) -> bool:
        if self.force:
            return False
        return (self._recorded().get(stage) == self.stage_key(stage)
                and all(o.exists() for o in self._outputs(stage)))

    def _record(self, stage):
        rec = self._recorded()
        rec[stage] = self.stage_key(stage)
        # downstream stages are stale once an upstream stage reran
        for s in STAGES[STAGES.index(stage) + 1:]:
            rec.pop(s, None)
        _dump_json(rec, self.paths.stages)

    def run_stage(self, stage: str):
        if self.cached(stage):
            log.info("stage %s: cached", stage)
            self.timings[stage] = "cached"
            return
        self.paths.root.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        try:
            getattr(self, f"_{stage}")()
        except (ConfigError, SchemaValidationError):
            raise
        except Exception as exc:  # any stage error is reported with the stage name
            self.paths.failure.write_text(f"stage={stage}\nerror={type(exc).__name__}: {exc}\n")
            raise StageError(stage, exc) from exc
        self.timings[stage] = time.perf_counter() - t0
        self._record(stage)
        log.info("stage %s: %.2fs", stage, self.timings[stage])

    def run(self, stages=STAGES) -> Path:
        self.validate()
        if self.paths.failure.exists():
            self.paths.failure.unlink()
        for s in stages:
            self.run_stage(s)
        self.write_summary()
        return self.paths.root

    # -- validation --------------------------------------------------------------------

    def validate(self):
        """Cheap checks that must pass before any compute. Raises ConfigError."""
        try:
            self._validate()
        except (ConfigError, SchemaValidationError):
            raise
        except ArtpopError as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        cfg = self.cfg
        if cfg.fixture is not None and cfg.auxiliary is None:
            check_columns(cfg, X_NAMES, Y_NAMES)
        else:
            for p in (cfg.auxiliary, cfg.survey):
                if not Path(p).exists():
                    raise ConfigError(f"input file not found: {p}")
            aux = load_auxiliary_frame(cfg.auxiliary, cfg.schema)
            survey = load_survey_frame(cfg.survey, cfg.schema)
            check_columns(cfg, aux.x_names, survey.y_names)

    # -- stages ----------------------------------------------------------------------------

    def _inputs(self):
        cfg = self.cfg
        self.paths.auxiliary.parent.mkdir(parents=True, exist_ok=True)
        if cfg.fixture is not None and cfg.auxiliary is None:
            fx = make_fixture(cfg.fixture)
            write_fixture(fx, self.paths.auxiliary.parent)
            return
        # copy the validated frames into the run directory in canonical form
        emit_auxiliary_frame(load_auxiliary_frame(cfg.auxiliary, cfg.schema), self.paths.auxiliary)
        emit_survey_frame(load_survey_frame(cfg.survey, cfg.schema), self.paths.survey)

    def load_inputs(self):
        schema = Schema(y=self._y_columns())
        aux = load_auxiliary_frame(self.paths.auxiliary, Schema())
        survey = load_survey_frame(self.paths.survey, schema)
        return aux, survey

    def _y_columns(self):
        _, header, _ = _read_rows(self.paths.survey)
        x = set(load_auxiliary_frame(self.paths.auxiliary, Schema()).x_names)
        return tuple(c for c in header if c not in x and c not in ("plot_id", "domain_id", "stratum"))

    def _generate(self):
        cfg = self.cfg
        aux, survey = self.load_inputs()
        report = validate_cross_frames(aux, survey, k=cfg.imputation.k)
        if not report.ok:
            raise SchemaValidationError(report)
        variables = cfg.matching_variables or aux.x_names
        scaling = fit_scaling(apply_transforms(aux, cfg.transforms), variables)
        self.paths.scaling.write_text(scaling.to_json() + "\n")
        pop = generate_population(
            aux, survey, cfg.imputation, scaling=scaling, transforms=cfg.transforms,
            variables=variables, workers=self.workers,
            retain_neighbors=cfg.diagnostics.retain_neighbor_lists,
        )
        pop = _with_provenance(pop, self.provenance)
        emit_population(pop, self.paths.population)
        meta = population_metadata(pop, cfg.imputation, config_sha256=self.cfg.config_hash,
                                   transforms=[t.__dict__ for t in cfg.transforms],
                                   matching_variables=list(variables))
        _dump_json(meta, self.paths.population_meta)
        truth = domain_truth(pop)
        df = pd.DataFrame(truth.means, columns=list(truth.variables))
        df.insert(0, "N", truth.counts)
        df.insert(0, "domain_id", list(truth.domains))
        emit_table(df, self.paths.truth, self.provenance)
        if pop.neighbors is not None:
            nb = pd.DataFrame(pop.neighbors, columns=[f"n{j + 1}" for j in range(pop.neighbors.shape[1])])
            nb.insert(0, "unit_id", pop.unit_id)
            emit_table(nb, self.paths.neighbors, self.provenance)

    def load_population(self, with_neighbors=False) -> ArtificialPopulation:
        pop = load_population(self.paths.population)
        if with_neighbors and self.paths.neighbors.exists():
            nb, _ = load_table(self.paths.neighbors)
            order = pd.Index(nb["unit_id"]).get_indexer(pop.unit_id)
            if (order < 0).any():
                raise ProvenanceMissing("neighbor lists do not cover the population")
            pop = replace(pop, neighbors=nb.iloc[:, 1:].to_numpy(np.int64)[order])
        return pop

    def design(self, pop) -> DesignSpec:
        d = self.cfg.design
        slots = dict(d.out_of_scope_slots)
        if self.cfg.count_out_of_scope_units:
            aux = load_auxiliary_frame(self.paths.auxiliary, Schema())
            out = aux.cluster_id[~aux.in_scope]
            for c, n in zip(*np.unique(out, return_counts=True)):
                slots[int(c)] = slots.get(int(c), 0) + int(n)
        return DesignSpec(d.replicates, d.master_seed, slots)

    def _sample(self):
        pop = self.load_population()
        design = self.design(pop)
        layout = ClusterLayout.build(pop, design)
        with open(self.paths.replicates, "w", encoding="utf-8") as fh:
            fh.write(f"# config_sha256={self.cfg.config_hash}\n")
            fh.write("rep_index,unit_id\n")
            for r in range(1, design.replicates + 1):
                rep = draw_replicate(pop, design, r, layout)
                fh.write("".join(f"{r},{u}\n" for u in rep.selected.tolist()))

    def load_replicates(self):
        df = pd.read_csv(self.paths.replicates, comment="#", dtype=np.int64)
        return df

    def response(self, pop) -> str:
        return self.cfg.estimation.response or pop.y_names[0]

    def _estimate(self):
        cfg = self.cfg
        pop = self.load_population()
        reps = self.load_replicates()
        variables = list(cfg.estimation.variables)
        moments = population_moments(pop, variables)
        y = pop.column(self.response(pop))
        X = pop.x[:, [pop.x_names.index(v) for v in variables]]
        pos = pd.Index(pop.unit_id).get_indexer(reps["unit_id"].to_numpy())
        if (pos < 0).any():
            raise ProvenanceMissing("replicate units missing from the population")
        rep_idx = reps["rep_index"].to_numpy()
        bounds = np.flatnonzero(np.diff(rep_idx)) + 1
        groups = np.split(pos, bounds)
        labels = rep_idx[np.concatenate([[0], bounds])] if len(rep_idx) else []
        which = tuple(e for e in ESTIMATORS if e in cfg.estimation.estimators)

        def one(args):
            r, rows = args
            return r, run_estimators(y[rows], X[rows], pop.domain_id[rows], moments, which)

        with ThreadPoolExecutor(max_workers=max(1, self.workers)) as ex:
            out = list(ex.map(one, zip(labels.tolist() if len(rep_idx) else [], groups)))
        results = []
        failed_rows = []
        for r, (res, failures) in out:
            for name in which:
                if name in res:
                    results.append((r, res[name]))
                else:
                    failed_rows.append((r, name, failures[name]))
        records = records_frame(results)
        if failed_rows:
            records = pd.concat([records, _failure_records(failed_rows, moments)], ignore_index=True)
            order = {e: i for i, e in enumerate(ESTIMATORS)}
            records["_e"] = records["estimator"].map(order)
            records["_d"] = records["domain_id"].map({d: i for i, d in enumerate(moments.domains)})
            records = records.sort_values(["rep_index", "_e", "_d"], kind="stable")[RECORD_COLUMNS]
        emit_table(records.reset_index(drop=True), self.paths.estimates,
                   {**self.provenance, "ci_multiplier": repr(CI_MULTIPLIER),
                    "response": self.response(pop)})

    def _evaluate(self):
        pop = self.load_population()
        records, _ = load_table(self.paths.estimates)
        records["flags"] = records["flags"].fillna("")
        resp = self.response(pop)
        truth = domain_truth(pop).as_dict(resp)
        metrics = compute_metrics(records, truth, zero_proportion(pop, resp))
        emit_table(metrics, self.paths.metrics, {**self.provenance, "response": resp})

    def _diagnose(self):
        if not self.cfg.diagnostics.enabled:
            self.paths.diagnostics.mkdir(parents=True, exist_ok=True)
            return
        _, survey = self.load_inputs()
        pop = self.load_population(with_neighbors=True)
        bundle = diagnose(survey, pop, self.cfg.diagnostics.variables)
        d = self.paths.diagnostics
        if d.exists():
            for f in d.glob("*.csv"):
                f.unlink()
        bundle.write(d)
        _dump_json(_clean(bundle.summary()), d / "summary.json")

    # -- summary ---------------------------------------------------------------------------

    def artifacts(self) -> list[Path]:
        root = self.paths.root
        skip = {self.paths.summary, self.paths.timings, self.paths.stages, self.paths.failure}
        return sorted(p for p in root.rglob("*") if p.is_file() and p not in skip)

    def write_summary(self) -> dict:
        root = self.paths.root
        summary = {
            "config_sha256": self.cfg.config_hash,
            "seeds": {"imputation": self.cfg.imputation.master_seed,
                      "design": self.cfg.design.master_seed},
            "stages": {s: self.stage_key(s) for s in STAGES if s in self._recorded()},
            "artifacts": {str(p.relative_to(root)): sha256_file(p) for p in self.artifacts()},
        }
        if self.paths.metrics.exists():
            metrics, _ = load_table(self.paths.metrics)
            summary["bhf_mse_ratio_zero_share_slope"] = _finite_or_none(mse_ratio_slope(metrics))
        _dump_json(summary, self.paths.summary)
        timings = {"stages_seconds": self.timings, "workers": self.workers}
        _dump_json(timings, self.paths.timings)
        return summary


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    return obj


def _with_provenance(pop, extra):
    return replace(pop, provenance={**pop.provenance, **extra})


def _failure_records(rows, moments) -> pd.DataFrame:
    parts = []
    for r, name, msg in rows:
        D = len(moments.domains)
        parts.append(pd.DataFrame({
            "rep_index": r, "estimator": name, "domain_id": list(moments.domains),
            "n_d": np.zeros(D, dtype=np.int64), "estimate": np.nan, "mse_hat": np.nan,
            "ci_low": np.nan, "ci_high": np.nan, "flags": ESTIMATOR_FAILED,
        }))
    return pd.concat(parts, ignore_index=True)


def run_pipeline(cfg: RunConfig, workers: int = 1, stages=STAGES, force: bool = False) -> Path:
    return Pipeline(cfg, workers=workers, force=force).run(stages)


# -- sensitivity sweep ---------------------------------------------------------------------

DEFAULT_SWEEP_K = (1, 5, 10, 20, 50, 100)


def sweep_runs(k_values=DEFAULT_SWEEP_K, kbaabb_k: int = 10) -> list[tuple[str, int]]:
    runs = [("single_nn", 1), ("kbaabb", kbaabb_k)]
    runs += [("uniform_knn", int(k)) for k in k_values]
    return runs


def sensitivity_sweep(cfg: RunConfig, k_values=DEFAULT_SWEEP_K, workers: int = 1,
                      out_dir=None) -> pd.DataFrame:
    """Generate + diagnose once per (method, k); returns the combined SD-correlation table.

    Inputs come from the regular ``inputs`` stage of ``cfg``; per-run
    diagnostics land in ``<out>/sweep/<method>_k<k>/``.
    """
    pipe = Pipeline(cfg, workers=workers)
    pipe.validate()
    pipe.run_stage("inputs")
    aux, survey = pipe.load_inputs()
    root = Path(out_dir) if out_dir is not None else pipe.paths.root / "sweep"
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for method, k in sweep_runs(k_values, cfg.imputation.k if cfg.imputation.method == "kbaabb" else 10):
        icfg = ImputationConfig(method, k, cfg.imputation.master_seed)
        pop = generate_population(aux, survey, icfg, transforms=cfg.transforms,
                                  variables=cfg.matching_variables, workers=workers,
                                  retain_neighbors=cfg.diagnostics.retain_neighbor_lists)
        bundle = diagnose(survey, pop, cfg.diagnostics.variables)
        bundle.write(root / f"{method}_k{k}")
        for v, s in bundle.spreads.items():
            rows.append({"method": method, "k": k, "variable": v, "sd_correlation": s.correlation,
                         "same_domain_share": bundle.crosstab.same_domain_share,
                         "ks": bundle.marginals[v].ks})
    table = pd.DataFrame(rows)
    emit_table(table, root / "sd_correlation.csv", {"config_sha256": cfg.config_hash})
    return table
