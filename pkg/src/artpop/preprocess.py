"""Matching-space preparation: skew transforms, per-stratum standardization,
and correlation audits of the matching variables.

Scaling constants always come from the population (recipient) frame and are
reused unchanged on the donor frame.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .datamodel import sorted_labels
from .errors import MissingConstants, MissingVariable, NonPositiveLogArgument, ZeroVariance


@dataclass(frozen=True)
class TransformSpec:
    variable: str
    direction: str = "right"  # right | left | none
    c: float = 0.0

    def __post_init__(self):
        if self.direction not in ("right", "left", "none"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.direction == "none":
            return np.asarray(values, dtype=float)
        arg = self.c + values if self.direction == "right" else self.c - values
        bad = np.flatnonzero(~(arg > 0))
        if len(bad):
            raise NonPositiveLogArgument(self.variable, int(bad[0]) + 1)
        return np.log(arg)

    @classmethod
    def from_dict(cls, d) -> "TransformSpec":
        return cls(variable=d["variable"], direction=d.get("direction", "right"), c=float(d.get("c", 0.0)))


def apply_transforms(frame, specs: Sequence[TransformSpec]):
    """Return a copy of ``frame`` whose x columns are log-transformed per spec.

    The input frame is left untouched; keep it around for reporting in the
    original units.
    """
    x = frame.x.copy()
    for spec in specs:
        if spec.variable not in frame.x_names:
            raise MissingVariable(spec.variable)
        j = frame.x_names.index(spec.variable)
        x[:, j] = spec.apply(frame.x[:, j])
    return replace(frame, x=x)


def suggest_offset(values, direction: str) -> float:
    """Offset that keeps the log argument at least 1 over ``values``."""
    values = np.asarray(values, dtype=float)
    if direction == "right":
        return float(1.0 - values.min())
    if direction == "left":
        return float(1.0 + values.max())
    return 0.0


def skewness(values) -> float:
    """Standardized third central moment (population convention)."""
    v = np.asarray(values, dtype=float)
    d = v - v.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0
    return float(np.mean(d ** 3) / m2 ** 1.5)


def skewness_report(frame, variables: Sequence[str] | None = None) -> dict:
    variables = variables or frame.x_names
    return {v: skewness(frame.column(v)) for v in variables}


@dataclass(frozen=True, eq=False)
class ScalingConstants:
    strata: tuple[str, ...]
    variables: tuple[str, ...]
    mean: np.ndarray  # (n_strata, n_variables)
    sd: np.ndarray

    def lookup(self, stratum: str, variable: str) -> tuple[float, float]:
        try:
            i = self.strata.index(stratum)
            j = self.variables.index(variable)
        except ValueError:
            raise MissingConstants(stratum, variable) from None
        return float(self.mean[i, j]), float(self.sd[i, j])

    def to_json(self) -> str:
        body = {
            "strata": list(self.strata),
            "variables": list(self.variables),
            "mean": [[repr(float(v)) for v in row] for row in self.mean],
            "sd": [[repr(float(v)) for v in row] for row in self.sd],
        }
        return json.dumps(body, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScalingConstants":
        body = json.loads(text)
        return cls(
            tuple(body["strata"]), tuple(body["variables"]),
            np.array([[float(v) for v in row] for row in body["mean"]]).reshape(len(body["strata"]), -1),
            np.array([[float(v) for v in row] for row in body["sd"]]).reshape(len(body["strata"]), -1),
        )


def fit_scaling(aux, variables: Sequence[str]) -> ScalingConstants:
    """Per-stratum mean and population SD (divide by n) of each variable.

    Only in-scope units enter the fit: they are the recipients.
    """
    for v in variables:
        if v not in aux.x_names:
            raise MissingVariable(v)
    mask = aux.in_scope if hasattr(aux, "in_scope") else np.ones(len(aux), bool)
    strata = tuple(sorted_labels(aux.stratum[mask].tolist()))
    cols = [aux.x_names.index(v) for v in variables]
    mean = np.empty((len(strata), len(variables)))
    sd = np.empty_like(mean)
    for i, s in enumerate(strata):
        block = aux.x[mask & (aux.stratum == s)][:, cols]
        for j, v in enumerate(variables):
            col = block[:, j]
            if len(col) < 2 or np.all(col == col[0]):
                raise ZeroVariance(s, v)
            mean[i, j] = col.mean()
            sd[i, j] = col.std()
    return ScalingConstants(strata, tuple(variables), mean, sd)


def apply_scaling(frame, constants: ScalingConstants):
    """Center and scale ``constants.variables`` in ``frame`` stratum by stratum."""
    x = frame.x.copy()
    for v in constants.variables:
        if v not in frame.x_names:
            raise MissingVariable(v)
    for s in sorted_labels(frame.stratum.tolist()):
        rows = frame.stratum == s
        if s not in constants.strata:
            raise MissingConstants(s, constants.variables[0])
        i = constants.strata.index(s)
        for j, v in enumerate(constants.variables):
            c = frame.x_names.index(v)
            x[rows, c] = (frame.x[rows, c] - constants.mean[i, j]) / constants.sd[i, j]
    return replace(frame, x=x)


def matching_matrix(frame, variables: Sequence[str]) -> np.ndarray:
    return np.ascontiguousarray(frame.x[:, [frame.x_names.index(v) for v in variables]])


@dataclass(frozen=True)
class CorrelationAudit:
    variables: tuple[str, ...]
    matrices: dict  # stratum -> (p, p) Pearson correlation
    flagged: list   # (stratum, var_a, var_b, r)
    threshold: float


def correlation_audit(frame, variables: Sequence[str], threshold: float = 0.5) -> CorrelationAudit:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    X = matching_matrix(frame, variables)
    matrices, flagged = {}, []
    for s in sorted_labels(frame.stratum.tolist()):
        block = X[frame.stratum == s]
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.corrcoef(block, rowvar=False) if len(block) > 1 else np.full((len(variables),) * 2, np.nan)
        r = np.atleast_2d(r)
        matrices[s] = r
        for a in range(len(variables)):
            for b in range(a + 1, len(variables)):
                if abs(r[a, b]) > threshold:
                    flagged.append((s, variables[a], variables[b], float(r[a, b])))
    return CorrelationAudit(tuple(variables), matrices, flagged, threshold)
