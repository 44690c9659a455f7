"""Domain data model, validation and CSV ingestion for irregular functional data.

Datasets are stored in "long" CSV form, one observation per row, with the
header ``subject_id,variable_id,role,time,value``.  A companion JSON schema
declares which variable ids are covariates/responses and the time intervals
on which they live.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from fofr.errors import (
    BadGridSize,
    DomainViolation,
    DuplicateTimestamp,
    InsufficientCoverage,
    MalformedRow,
    MissingChannel,
)

CSV_HEADER = ["subject_id", "variable_id", "role", "time", "value"]

#: minimum number of distinct pooled observation times per channel
MIN_POOLED_TIMES = 10
#: pooled times must span at least this share of the declared interval
MIN_POOLED_SPAN = 0.9


@dataclass(frozen=True)
class Interval:
    """A compact time interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise DomainViolation(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise DomainViolation(f"interval requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        return bool(np.all((t >= self.lo) & (t <= self.hi)))


@dataclass(frozen=True)
class ObservationSeries:
    """One variable's irregular time series for one subject."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.ndim != 1 or len(times) != len(values):
            raise MalformedRow("times and values must be 1-d arrays of equal length")
        if len(times) < 1:
            raise MalformedRow("series must contain at least one observation")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise MalformedRow("times and values must be finite")
        if np.any(np.diff(times) <= 0):
            raise DuplicateTimestamp("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class EvalGrid:
    """Equispaced evaluation grid with trapezoidal quadrature weights."""

    points: np.ndarray
    quad_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "quad_weights", np.asarray(self.quad_weights, dtype=float))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def interval(self) -> Interval:
        return Interval(float(self.points[0]), float(self.points[-1]))


def make_grid(domain: Interval, g: int) -> EvalGrid:
    """Build a g-point equispaced grid over ``domain`` with trapezoid weights."""
    if g < 2:
        raise BadGridSize(f"grid needs at least 2 points, got {g}")
    points = np.linspace(domain.lo, domain.hi, g)
    h = domain.length / (g - 1)
    weights = np.full(g, h)
    weights[0] = weights[-1] = h / 2.0
    return EvalGrid(points, weights)


@dataclass(frozen=True)
class FunctionalDataset:
    """N subjects x (R covariate channels, D response channels).

    ``covariates[i][r]`` is the ObservationSeries of covariate channel r for
    subject i; ``responses`` is analogous, or None for prediction-only data.
    """

    covariate_domain: Interval
    response_domain: Interval
    covariate_names: tuple
    response_names: tuple
    subject_ids: tuple
    covariates: tuple  # tuple over subjects of tuples over channels
    responses: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "response_names", tuple(self.response_names))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "covariates", tuple(tuple(row) for row in self.covariates))
        if self.responses is not None:
            object.__setattr__(self, "responses", tuple(tuple(row) for row in self.responses))
        self._validate()

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    @property
    def n_responses(self) -> int:
        return len(self.response_names)

    def covariate_channel(self, r: int) -> list:
        """All subjects' series for covariate channel r."""
        return [row[r] for row in self.covariates]

    def response_channel(self, d: int) -> list:
        if self.responses is None:
            raise MissingChannel("dataset has no responses")
        return [row[d] for row in self.responses]

    def _validate(self):
        if self.n_subjects < 2:
            raise InsufficientCoverage(f"need at least 2 subjects, got {self.n_subjects}")
        if self.n_covariates < 1 or self.n_responses < 1:
            raise MissingChannel("need at least one covariate and one response channel")
        if len(self.covariates) != self.n_subjects:
            raise MissingChannel("covariates rows do not match subject count")
        for sid, row in zip(self.subject_ids, self.covariates):
            if len(row) != self.n_covariates:
                raise MissingChannel(f"subject {sid!r} lacks a covariate channel")
            for name, series in zip(self.covariate_names, row):
                if not self.covariate_domain.contains(series.times):
                    raise DomainViolation(
                        f"subject {sid!r} channel {name!r}: time outside covariate domain")
        if self.responses is not None:
            if len(self.responses) != self.n_subjects:
                raise MissingChannel("responses rows do not match subject count")
            for sid, row in zip(self.subject_ids, self.responses):
                if len(row) != self.n_responses:
                    raise MissingChannel(f"subject {sid!r} lacks a response channel")
                for name, series in zip(self.response_names, row):
                    if not self.response_domain.contains(series.times):
                        raise DomainViolation(
                            f"subject {sid!r} channel {name!r}: time outside response domain")
        for r, name in enumerate(self.covariate_names):
            _check_coverage(self.covariate_channel(r), self.covariate_domain, name)
        if self.responses is not None:
            for d, name in enumerate(self.response_names):
                _check_coverage(self.response_channel(d), self.response_domain, name)


def _check_coverage(series_set, domain: Interval, name: str):
    pooled = np.unique(np.concatenate([s.times for s in series_set]))
    if len(pooled) < MIN_POOLED_TIMES:
        raise InsufficientCoverage(
            f"channel {name!r}: only {len(pooled)} distinct pooled times "
            f"(need >= {MIN_POOLED_TIMES})")
    span = pooled[-1] - pooled[0]
    if span < MIN_POOLED_SPAN * domain.length:
        raise InsufficientCoverage(
            f"channel {name!r}: pooled times span {span:.4g} of interval length "
            f"{domain.length:.4g} (need >= {MIN_POOLED_SPAN:.0%})")


@dataclass(frozen=True)
class DatasetSchema:
    """Declares channel roles, domains and the default grid size for a CSV file."""

    covariates: tuple
    responses: tuple
    covariate_domain: Interval
    response_domain: Interval
    grid_size: int = 101

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "responses", tuple(self.responses))
        if not self.covariates or not self.responses:
            raise MissingChannel("schema must declare at least one covariate and one response")
        overlap = set(self.covariates) & set(self.responses)
        if overlap:
            raise MalformedRow(f"variables declared as both covariate and response: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "responses": list(self.responses),
            "covariate_domain": [self.covariate_domain.lo, self.covariate_domain.hi],
            "response_domain": [self.response_domain.lo, self.response_domain.hi],
            "grid_size": self.grid_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        try:
            return cls(
                covariates=d["covariates"],
                responses=d["responses"],
                covariate_domain=Interval(*map(float, d["covariate_domain"])),
                response_domain=Interval(*map(float, d["response_domain"])),
                grid_size=int(d.get("grid_size", 101)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRow(f"bad schema: {exc}") from exc


def load_schema(path) -> DatasetSchema:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedRow(f"schema {path}: invalid JSON ({exc})") from exc
    return DatasetSchema.from_dict(payload)


def load_dataset(path, schema: DatasetSchema) -> FunctionalDataset:
    """Parse and validate a long-format CSV into a FunctionalDataset.

    Rows may arrive in any order; they are grouped by (subject, variable) and
    sorted by time.  Every subject appearing in the file must carry every
    declared covariate channel; responses are either present for all subjects
    or absent entirely (prediction-only data).
    """
    role_of = {v: "covariate" for v in schema.covariates}
    role_of.update({v: "response" for v in schema.responses})

    rows = {}  # (subject, variable) -> list of (time, value)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(CSV_HEADER)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise MalformedRow(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            sid, var, role, t_raw, v_raw = row
            if var not in role_of:
                raise MalformedRow(f"{path}:{lineno}: undeclared variable {var!r}")
            if role != role_of[var]:
                raise MalformedRow(
                    f"{path}:{lineno}: variable {var!r} declared {role_of[var]!r}, row says {role!r}")
            try:
                t = float(t_raw)
                v = float(v_raw)
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: non-numeric time/value") from exc
            if not (np.isfinite(t) and np.isfinite(v)):
                raise MalformedRow(f"{path}:{lineno}: non-finite time/value")
            domain = schema.covariate_domain if role == "covariate" else schema.response_domain
            if not domain.contains(t):
                raise DomainViolation(
                    f"{path}:{lineno}: time {t} outside declared interval "
                    f"[{domain.lo}, {domain.hi}] for {var!r}")
            rows.setdefault((sid, var), []).append((t, v))

    if not rows:
        raise MalformedRow(f"{path}: no data rows")

    subjects = sorted({sid for sid, _ in rows})
    have_responses = any(var in set(schema.responses) for _, var in rows)

    def build_series(sid, var):
        obs = rows.get((sid, var))
        if obs is None:
            raise MissingChannel(f"subject {sid!r} lacks declared variable {var!r}")
        obs.sort(key=lambda tv: tv[0])
        times = np.array([t for t, _ in obs])
        if len(times) > 1 and np.any(np.diff(times) == 0):
            dup = times[np.flatnonzero(np.diff(times) == 0)[0]]
            raise DuplicateTimestamp(f"subject {sid!r} variable {var!r}: duplicate time {dup}")
        return ObservationSeries(times, np.array([v for _, v in obs]))

    covariates = [[build_series(sid, var) for var in schema.covariates] for sid in subjects]
    responses = None
    if have_responses:
        responses = [[build_series(sid, var) for var in schema.responses] for sid in subjects]

    return FunctionalDataset(
        covariate_domain=schema.covariate_domain,
        response_domain=schema.response_domain,
        covariate_names=schema.covariates,
        response_names=schema.responses,
        subject_ids=subjects,
        covariates=covariates,
        responses=responses,
    )


def write_dataset(dataset: FunctionalDataset, path):
    """Write a dataset in the long CSV format; exact float round-trip via repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i, sid in enumerate(dataset.subject_ids):
            for name, series in zip(dataset.covariate_names, dataset.covariates[i]):
                for t, v in zip(series.times, series.values):
                    writer.writerow([sid, name, "covariate", repr(float(t)), repr(float(v))])
            if dataset.responses is not None:
                for name, series in zip(dataset.response_names, dataset.responses[i]):
                    for t, v in zip(series.times, series.values):
                        writer.writerow([sid, name, "response", repr(float(t)), repr(float(v))])


def write_schema(schema: DatasetSchema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
