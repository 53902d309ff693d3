"""Core frames and their on-disk CSV formats.

Three record sets move through the package:

* ``AuxiliaryFrame``: every population unit with its cluster, domain,
  stratum and quantitative auxiliary values.
* ``SurveyFrame``: the donor sample, same auxiliary columns plus responses.
* ``ArtificialPopulation``: the in-scope auxiliary units with imputed
  responses and the donor each one came from.

Files are comma-delimited UTF-8 with a header row. Lines starting with ``#``
before the header carry ``key=value`` provenance and are kept on load so that
``emit(load(f))`` reproduces a canonical file byte for byte.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateUnitId,
    MissingColumn,
    ParseFailure,
    SchemaValidationError,
)

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class Schema:
    """Maps logical fields onto file column names.

    ``x=None`` means "every column that is not an id/label (or a ``y``)".
    """

    x: tuple[str, ...] | None = None
    y: tuple[str, ...] = ()
    unit_id: str = "unit_id"
    plot_id: str = "plot_id"
    cluster_id: str = "cluster_id"
    domain_id: str = "domain_id"
    stratum: str = "stratum"
    in_scope: str = "in_scope"

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "Schema":
        if not d:
            return cls()
        d = dict(d)
        if d.get("x") is not None:
            d["x"] = tuple(d["x"])
        if d.get("y") is not None:
            d["y"] = tuple(d["y"])
        else:
            d.pop("y", None)
        return cls(**d)


@dataclass(frozen=True)
class SchemaReport:
    errors: list = field(default_factory=list)  # (row, column, violation)
    warnings: list = field(default_factory=list)
    column_summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True, eq=False)
class AuxiliaryFrame:
    unit_id: np.ndarray
    cluster_id: np.ndarray
    domain_id: np.ndarray
    stratum: np.ndarray
    in_scope: np.ndarray
    x: np.ndarray
    x_names: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.unit_id)

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.x_names.index(name)]

    def subset(self, mask) -> "AuxiliaryFrame":
        return AuxiliaryFrame(
            self.unit_id[mask], self.cluster_id[mask], self.domain_id[mask],
            self.stratum[mask], self.in_scope[mask], self.x[mask], self.x_names,
            dict(self.provenance),
        )


@dataclass(frozen=True, eq=False)
class SurveyFrame:
    plot_id: np.ndarray
    domain_id: np.ndarray
    stratum: np.ndarray
    x: np.ndarray
    x_names: tuple[str, ...]
    y: np.ndarray
    y_names: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.plot_id)

    def column(self, name: str) -> np.ndarray:
        if name in self.y_names:
            return self.y[:, self.y_names.index(name)]
        return self.x[:, self.x_names.index(name)]


@dataclass(frozen=True, eq=False)
class ArtificialPopulation:
    """In-scope population units with jointly donated responses.

    ``neighbors`` holds the full ranked donor pool per unit when it was
    retained at generation time (needed for pool-membership diagnostics).
    """

    unit_id: np.ndarray
    cluster_id: np.ndarray
    domain_id: np.ndarray
    stratum: np.ndarray
    x: np.ndarray
    x_names: tuple[str, ...]
    y: np.ndarray
    y_names: tuple[str, ...]
    donor_id: np.ndarray
    donor_rank: np.ndarray
    neighbors: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.unit_id)

    def column(self, name: str) -> np.ndarray:
        if name in self.y_names:
            return self.y[:, self.y_names.index(name)]
        return self.x[:, self.x_names.index(name)]


# -- formatting ---------------------------------------------------------------

def format_float(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def sorted_labels(values: Iterable) -> list:
    """Unique labels, numeric order when every label looks like an integer."""
    uniq = set(values)
    try:
        return sorted(uniq, key=lambda s: (int(s), s))
    except (TypeError, ValueError):
        return sorted(uniq)


def _read_rows(path) -> tuple[dict, list[str], list[list[str]]]:
    provenance = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.readlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            key, value = body.split("=", 1)
            provenance[key.strip()] = value.strip()
        i += 1
    reader = csv.reader(lines[i:])
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumn("<header>") from None
    rows = [r for r in reader if r]
    return provenance, header, rows


def _write_rows(path, provenance: Mapping, header: Sequence[str], rows: Iterable[Sequence[str]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key in sorted(provenance):
            fh.write(f"# {key}={provenance[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _column_index(header, name):
    try:
        return header.index(name)
    except ValueError:
        raise MissingColumn(name) from None


def _parse_int(rows, j, column):
    out = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        try:
            out[r] = int(row[j])
        except (ValueError, IndexError):
            raise ParseFailure(r + 1, column, row[j] if j < len(row) else None) from None
    return out


def _parse_float(rows, j, column, allow_missing=False):
    out = np.empty(len(rows), dtype=np.float64)
    for r, row in enumerate(rows):
        s = row[j].strip() if j < len(row) else ""
        if s == "":
            if allow_missing:
                out[r] = np.nan
                continue
            raise ParseFailure(r + 1, column, s)
        try:
            v = float(s)
        except ValueError:
            raise ParseFailure(r + 1, column, s) from None
        if not math.isfinite(v):
            raise ParseFailure(r + 1, column, s)
        out[r] = v
    return out


def _parse_label(rows, j, column):
    vals = []
    for r, row in enumerate(rows):
        s = row[j].strip() if j < len(row) else ""
        if s == "":
            raise ParseFailure(r + 1, column, s)
        vals.append(s)
    return np.array(vals, dtype=str)


def _parse_bool(rows, j, column):
    out = np.empty(len(rows), dtype=bool)
    for r, row in enumerate(rows):
        s = row[j].strip().lower()
        if s in _TRUE:
            out[r] = True
        elif s in _FALSE:
            out[r] = False
        else:
            raise ParseFailure(r + 1, column, row[j])
    return out


def _check_unique(ids):
    uniq, counts = np.unique(ids, return_counts=True)
    dup = uniq[counts > 1]
    if len(dup):
        first = ids[np.isin(ids, dup)][0]
        raise DuplicateUnitId(int(first))


def _summarize(names, matrix) -> dict:
    out = {}
    for j, name in enumerate(names):
        col = matrix[:, j]
        finite = col[np.isfinite(col)]
        out[name] = {
            "count": int(len(finite)),
            "missing": int(len(col) - len(finite)),
            "min": float(finite.min()) if len(finite) else None,
            "max": float(finite.max()) if len(finite) else None,
        }
    return out


# -- auxiliary ----------------------------------------------------------------

def load_auxiliary_frame(path, schema: Schema | None = None) -> AuxiliaryFrame:
    schema = schema or Schema()
    provenance, header, rows = _read_rows(path)
    id_cols = {schema.unit_id, schema.cluster_id, schema.domain_id, schema.stratum, schema.in_scope}
    x_names = tuple(schema.x) if schema.x is not None else tuple(
        c for c in header if c not in id_cols and c not in schema.y
    )
    idx = {c: _column_index(header, c) for c in
           (schema.unit_id, schema.cluster_id, schema.domain_id, schema.stratum, *x_names)}
    unit_id = _parse_int(rows, idx[schema.unit_id], schema.unit_id)
    cluster_id = _parse_int(rows, idx[schema.cluster_id], schema.cluster_id)
    domain_id = _parse_label(rows, idx[schema.domain_id], schema.domain_id)
    stratum = _parse_label(rows, idx[schema.stratum], schema.stratum)
    if schema.in_scope in header:
        in_scope = _parse_bool(rows, header.index(schema.in_scope), schema.in_scope)
    else:
        in_scope = np.ones(len(rows), dtype=bool)
    x = np.empty((len(rows), len(x_names)))
    for j, name in enumerate(x_names):
        x[:, j] = _parse_float(rows, idx[name], name)
    _check_unique(unit_id)
    return AuxiliaryFrame(unit_id, cluster_id, domain_id, stratum, in_scope, x, x_names, provenance)


def emit_auxiliary_frame(frame: AuxiliaryFrame, path) -> None:
    header = ["unit_id", "cluster_id", "domain_id", "stratum", "in_scope", *frame.x_names]
    rows = (
        [str(int(frame.unit_id[i])), str(int(frame.cluster_id[i])), str(frame.domain_id[i]),
         str(frame.stratum[i]), "1" if frame.in_scope[i] else "0",
         *(format_float(v) for v in frame.x[i])]
        for i in range(len(frame))
    )
    _write_rows(path, frame.provenance, header, rows)


def validate_auxiliary(frame: AuxiliaryFrame) -> SchemaReport:
    errors = []
    bad = np.argwhere(~np.isfinite(frame.x))
    for r, j in bad:
        errors.append((int(r) + 1, frame.x_names[j], "missing or non-finite"))
    return SchemaReport(errors, [], _summarize(frame.x_names, frame.x))


# -- survey ---------------------------------------------------------------------

def load_survey_frame(path, schema: Schema | None = None, *, nonnegative_y: bool = True) -> SurveyFrame:
    """Load the donor sample. Rejects (raises) when validation finds errors."""
    schema = schema or Schema()
    if not schema.y:
        raise MissingColumn("<y columns: schema.y is empty>")
    provenance, header, rows = _read_rows(path)
    id_cols = {schema.plot_id, schema.domain_id, schema.stratum}
    x_names = tuple(schema.x) if schema.x is not None else tuple(
        c for c in header if c not in id_cols and c not in schema.y
    )
    y_names = tuple(schema.y)
    idx = {c: _column_index(header, c) for c in
           (schema.plot_id, schema.domain_id, schema.stratum, *y_names, *x_names)}
    plot_id = _parse_int(rows, idx[schema.plot_id], schema.plot_id)
    domain_id = _parse_label(rows, idx[schema.domain_id], schema.domain_id)
    stratum = _parse_label(rows, idx[schema.stratum], schema.stratum)
    x = np.empty((len(rows), len(x_names)))
    for j, name in enumerate(x_names):
        x[:, j] = _parse_float(rows, idx[name], name)
    y = np.empty((len(rows), len(y_names)))
    for j, name in enumerate(y_names):
        y[:, j] = _parse_float(rows, idx[name], name, allow_missing=True)
    _check_unique(plot_id)
    frame = SurveyFrame(plot_id, domain_id, stratum, x, x_names, y, y_names, provenance)
    report = validate_survey(frame, nonnegative_y=nonnegative_y)
    if not report.ok:
        raise SchemaValidationError(report)
    return frame


def validate_survey(frame: SurveyFrame, *, nonnegative_y: bool = True) -> SchemaReport:
    errors = []
    for r, j in np.argwhere(~np.isfinite(frame.x)):
        errors.append((int(r) + 1, frame.x_names[j], "missing or non-finite"))
    for r, j in np.argwhere(~np.isfinite(frame.y)):
        errors.append((int(r) + 1, frame.y_names[j], "missing response"))
    if nonnegative_y:
        with np.errstate(invalid="ignore"):
            neg = np.argwhere(frame.y < 0)
        for r, j in neg:
            errors.append((int(r) + 1, frame.y_names[j], f"negative value {frame.y[r, j]!r}"))
    summary = _summarize(frame.x_names + frame.y_names, np.hstack([frame.x, frame.y]))
    return SchemaReport(sorted(errors, key=lambda e: (e[0], e[1])), [], summary)


def emit_survey_frame(frame: SurveyFrame, path) -> None:
    header = ["plot_id", "domain_id", "stratum", *frame.x_names, *frame.y_names]
    rows = (
        [str(int(frame.plot_id[i])), str(frame.domain_id[i]), str(frame.stratum[i]),
         *(format_float(v) for v in frame.x[i]), *(format_float(v) for v in frame.y[i])]
        for i in range(len(frame))
    )
    _write_rows(path, frame.provenance, header, rows)


# -- cross-frame ----------------------------------------------------------------

def validate_cross_frames(aux: AuxiliaryFrame, survey: SurveyFrame, k: int = 10) -> SchemaReport:
    """Checks that must hold before imputation can run.

    Errors: differing auxiliary column sets, in-scope strata without at least
    ``k`` donors. Warnings: survey strata that never occur in the population.
    """
    errors, warnings = [], []
    if set(aux.x_names) != set(survey.x_names):
        missing = sorted(set(aux.x_names) - set(survey.x_names))
        extra = sorted(set(survey.x_names) - set(aux.x_names))
        errors.append((0, "x", f"column sets differ: missing={missing} extra={extra}"))
    aux_strata = set(aux.stratum[aux.in_scope].tolist())
    donor_strata, counts = np.unique(survey.stratum, return_counts=True)
    donors = dict(zip(donor_strata.tolist(), counts.tolist()))
    for s in sorted_labels(donors):
        if s not in aux_strata:
            warnings.append(f"survey stratum {s!r} absent from auxiliary frame")
    for s in sorted_labels(aux_strata):
        n = donors.get(s, 0)
        if n < k:
            errors.append((0, "stratum", f"insufficient donors in stratum {s!r}: {n} < k={k}"))
    return SchemaReport(errors, warnings, {})


# -- artificial population --------------------------------------------------------

def emit_population(pop: ArtificialPopulation, path) -> None:
    provenance = dict(pop.provenance)
    provenance["x_columns"] = ";".join(pop.x_names)
    provenance["y_columns"] = ";".join(pop.y_names)
    header = ["unit_id", "cluster_id", "domain_id", "stratum", *pop.x_names,
              "donor_id", "donor_rank", *pop.y_names]
    rows = (
        [str(int(pop.unit_id[i])), str(int(pop.cluster_id[i])), str(pop.domain_id[i]),
         str(pop.stratum[i]), *(format_float(v) for v in pop.x[i]),
         str(int(pop.donor_id[i])), str(int(pop.donor_rank[i])),
         *(format_float(v) for v in pop.y[i])]
        for i in range(len(pop))
    )
    _write_rows(path, provenance, header, rows)


def load_population(path) -> ArtificialPopulation:
    provenance, header, rows = _read_rows(path)
    try:
        x_names = tuple(c for c in provenance.pop("x_columns").split(";") if c)
        y_names = tuple(c for c in provenance.pop("y_columns").split(";") if c)
    except KeyError as exc:
        raise MissingColumn(str(exc)) from None
    idx = {c: _column_index(header, c) for c in
           ("unit_id", "cluster_id", "domain_id", "stratum", "donor_id", "donor_rank",
            *x_names, *y_names)}
    x = np.empty((len(rows), len(x_names)))
    for j, name in enumerate(x_names):
        x[:, j] = _parse_float(rows, idx[name], name)
    y = np.empty((len(rows), len(y_names)))
    for j, name in enumerate(y_names):
        y[:, j] = _parse_float(rows, idx[name], name)
    unit_id = _parse_int(rows, idx["unit_id"], "unit_id")
    _check_unique(unit_id)
    return ArtificialPopulation(
        unit_id=unit_id,
        cluster_id=_parse_int(rows, idx["cluster_id"], "cluster_id"),
        domain_id=_parse_label(rows, idx["domain_id"], "domain_id"),
        stratum=_parse_label(rows, idx["stratum"], "stratum"),
        x=x, x_names=x_names, y=y, y_names=y_names,
        donor_id=_parse_int(rows, idx["donor_id"], "donor_id"),
        donor_rank=_parse_int(rows, idx["donor_rank"], "donor_rank"),
        provenance=provenance,
    )


# -- generic result tables ----------------------------------------------------------

LABEL_COLUMNS = frozenset({"domain_id", "stratum", "estimator", "flags", "source", "variable",
                           "method", "donor_domain", "recipient_domain"})


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None or v is pd.NA:
        return ""
    return str(v)


def emit_table(df: pd.DataFrame, path, provenance: Mapping | None = None) -> None:
    """Write a result table with shortest round-trip floats and ``#`` provenance."""
    cols = [df[c].tolist() for c in df.columns]
    rows = ([_cell(col[i]) for col in cols] for i in range(len(df)))
    _write_rows(path, provenance or {}, [str(c) for c in df.columns], rows)


def load_table(path, label_columns=LABEL_COLUMNS) -> tuple[pd.DataFrame, dict]:
    """Inverse of ``emit_table``: labels stay strings, the rest is parsed numeric."""
    provenance, header, rows = _read_rows(path)
    data = {}
    for j, name in enumerate(header):
        raw = [r[j] if j < len(r) else "" for r in rows]
        if name in label_columns:
            data[name] = pd.Series(raw, dtype=object)
            continue
        if all(s.lstrip("-").isdigit() for s in raw if s) and all(raw):
            data[name] = pd.Series([int(s) for s in raw], dtype=np.int64)
        else:
            try:
                data[name] = pd.Series([float(s) if s else math.nan for s in raw], dtype=float)
            except ValueError:
                data[name] = pd.Series(raw, dtype=object)
    return pd.DataFrame(data, columns=header), provenance
