"""Run configuration: one YAML file with nested sections.

Relative paths resolve against the config file's directory. Every knob that
the method leaves open has a default here (kbaabb with k = 10, 2500
replicates, all four estimators).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .datamodel import Schema
from .errors import ConfigError
from .estimators import ESTIMATORS
from .fixtures import FixtureSpec
from .imputer import METHODS, ImputationConfig
from .preprocess import TransformSpec
from .sampler import DesignSpec

SECTIONS = ("inputs", "schema", "fixture", "transforms", "matching_variables", "imputation",
            "design", "estimation", "diagnostics", "output")


@dataclass(frozen=True)
class EstimationConfig:
    estimators: tuple[str, ...] = ESTIMATORS
    variables: tuple[str, ...] = ("tcc", "tri", "elev")
    response: str | None = None        # default: first response column


@dataclass(frozen=True)
class DiagnosticsConfig:
    enabled: bool = True
    retain_neighbor_lists: bool = False
    variables: tuple[str, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    auxiliary: Path | None
    survey: Path | None
    schema: Schema
    fixture: FixtureSpec | None
    transforms: tuple[TransformSpec, ...]
    matching_variables: tuple[str, ...] | None
    imputation: ImputationConfig
    design: DesignSpec
    count_out_of_scope_units: bool
    estimation: EstimationConfig
    diagnostics: DiagnosticsConfig
    output: Path
    raw: dict = field(default_factory=dict, compare=False)

    def section_hash(self, *names: str) -> str:
        """Digest of the named raw sections, for stage caching."""
        blob = json.dumps({n: self.raw.get(n) for n in names}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def config_hash(self) -> str:
        # where results go does not change what they are
        return self.section_hash(*(s for s in SECTIONS if s != "output"))

    def with_overrides(self, *, output=None, seed=None, retain_neighbor_lists=None) -> "RunConfig":
        """A copy with CLI overrides applied (the raw sections follow along)."""
        raw = json.loads(json.dumps(self.raw, default=str))
        kw = {}
        if output is not None:
            kw["output"] = Path(output)
            raw.setdefault("output", {})["directory"] = str(output)
        if seed is not None:
            kw["imputation"] = ImputationConfig(self.imputation.method, self.imputation.k, int(seed))
            kw["design"] = DesignSpec(self.design.replicates, int(seed) + 1,
                                      dict(self.design.out_of_scope_slots))
            raw.setdefault("imputation", {})["master_seed"] = int(seed)
            raw.setdefault("design", {})["master_seed"] = int(seed) + 1
        if retain_neighbor_lists is not None:
            kw["diagnostics"] = DiagnosticsConfig(self.diagnostics.enabled, bool(retain_neighbor_lists),
                                                  self.diagnostics.variables)
            raw.setdefault("diagnostics", {})["retain_neighbor_lists"] = bool(retain_neighbor_lists)
        return _replace(self, raw=raw, **kw)


def _replace(cfg, **kw):
    d = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    d.update(kw)
    return RunConfig(**d)


def _tuple(v):
    if v is None:
        return None
    if isinstance(v, str):
        return (v,)
    return tuple(v)


def _path(base: Path, v) -> Path | None:
    if v is None:
        return None
    p = Path(v)
    return p if p.is_absolute() else (base / p)


def _section(raw, name, default=None) -> Any:
    v = raw.get(name, default)
    return {} if v is None and isinstance(default, dict) else v


def parse_config(raw: Mapping, base_dir=".") -> RunConfig:
    """Build a RunConfig from an already-parsed mapping. Raises ConfigError."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = Path(base_dir)
    raw = dict(raw)
    try:
        inputs = _section(raw, "inputs", {})
        fixture = FixtureSpec.from_dict(raw["fixture"]) if raw.get("fixture") is not None else None
        aux = _path(base, inputs.get("auxiliary"))
        survey = _path(base, inputs.get("survey"))
        if fixture is None and (aux is None or survey is None):
            raise ConfigError("need inputs.auxiliary and inputs.survey, or a fixture section")
        schema = Schema.from_dict(_section(raw, "schema", {}))
        transforms = tuple(TransformSpec.from_dict(t) for t in (raw.get("transforms") or ()))

        imp = dict(_section(raw, "imputation", {}))
        if "master_seed" not in imp:
            raise ConfigError("imputation.master_seed is required")
        method = imp.get("method", "kbaabb")
        if method not in METHODS:
            raise ConfigError(f"unknown imputation method {method!r}")
        k = int(imp.get("k", 1 if method == "single_nn" else 10))
        imputation = ImputationConfig(method, k, int(imp["master_seed"]))

        des = dict(_section(raw, "design", {}))
        if "master_seed" not in des:
            raise ConfigError("design.master_seed is required")
        slots = {int(c): int(n) for c, n in (des.get("out_of_scope_slots") or {}).items()}
        design = DesignSpec(int(des.get("replicates", 2500)), int(des["master_seed"]), slots)

        est = dict(_section(raw, "estimation", {}))
        estimation = EstimationConfig(
            estimators=_tuple(est.get("estimators", ESTIMATORS)),
            variables=_tuple(est.get("variables", EstimationConfig.variables)),
            response=est.get("response"),
        )
        bad = set(estimation.estimators) - set(ESTIMATORS)
        if bad:
            raise ConfigError(f"unknown estimators: {sorted(bad)}")

        diag = dict(_section(raw, "diagnostics", {}))
        diagnostics = DiagnosticsConfig(
            enabled=bool(diag.get("enabled", True)),
            retain_neighbor_lists=bool(diag.get("retain_neighbor_lists", False)),
            variables=_tuple(diag.get("variables")),
        )
        out = _section(raw, "output", {})
        output = _path(base, out.get("directory", "out"))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return RunConfig(
        auxiliary=aux, survey=survey, schema=schema, fixture=fixture, transforms=transforms,
        matching_variables=_tuple(raw.get("matching_variables")), imputation=imputation,
        design=design, count_out_of_scope_units=bool(des.get("count_out_of_scope_units", True)),
        estimation=estimation, diagnostics=diagnostics, output=output, raw=raw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw or {}, path.parent)


def check_columns(cfg: RunConfig, x_names, y_names) -> None:
    """Every referenced variable must exist in the loaded frames."""
    x_names, y_names = set(x_names), set(y_names)
    refs = [("matching_variables", v) for v in (cfg.matching_variables or ())]
    refs += [("estimation.variables", v) for v in cfg.estimation.variables]
    refs += [("transforms", t.variable) for t in cfg.transforms]
    missing = [(where, v) for where, v in refs if v not in x_names]
    if cfg.estimation.response is not None and cfg.estimation.response not in y_names:
        missing.append(("estimation.response", cfg.estimation.response))
    for v in cfg.diagnostics.variables or ():
        if v not in y_names:
            missing.append(("diagnostics.variables", v))
    if missing:
        where, v = missing[0]
        raise ConfigError(f"{where} references absent column {v!r}")


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=True)


def default_fixture_config(fixture: FixtureSpec | None = None, replicates: int = 100) -> dict:
    """Raw config for a self-contained fixture run."""
    return {
        "fixture": (fixture or FixtureSpec()).to_dict(),
        "transforms": [
            {"variable": "tri", "direction": "right", "c": 0.0},
            {"variable": "ppt", "direction": "right", "c": 0.0},
            {"variable": "tmin01", "direction": "left", "c": 5.0001},
        ],
        "imputation": {"method": "kbaabb", "k": 10, "master_seed": 20240611},
        "design": {"replicates": replicates, "master_seed": 7},
        "estimation": {"estimators": list(ESTIMATORS), "variables": ["tcc", "tri", "elev"],
                       "response": "BA"},
        "diagnostics": {"retain_neighbor_lists": True},
        "output": {"directory": "out"},
    }


__all__ = ["DiagnosticsConfig", "EstimationConfig", "RunConfig", "check_columns",
           "default_fixture_config", "dump_config", "load_config", "parse_config"]
