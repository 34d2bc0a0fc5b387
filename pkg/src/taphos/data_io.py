"""Case-file ingestion, elapsed-time computation from date evidence,
synthetic dataset generation, and posterior effect exports.

Case tables are UTF-8 CSV with a header: ``case_id, discovery_date,
death_date_kind, death_date, range_start, range_end, pmi_days`` followed by
one column per covariate and one 0/1/blank column per characteristic
(blank means unobserved). ``pmi_days``, when filled, takes precedence over
the date columns so fractional intervals survive a round trip; otherwise
the interval is derived from the dates. Dates are ISO-8601.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy.stats import truncnorm

from .model import ModelStructure, char_probs
from .sampler import PosteriorSamples
from .schema import (
    CaseRecord,
    CovariateSchema,
    DecompositionSchema,
    SchemaError,
    encode_case,
)

DEATH_DATE_KINDS = (
    "longitudinal",
    "exact",
    "approximate",
    "range",
    "last_known_alive_exact",
    "last_known_alive_approximate",
    "unknown",
)

_BASE_COLUMNS = (
    "case_id",
    "discovery_date",
    "death_date_kind",
    "death_date",
    "range_start",
    "range_end",
    "pmi_days",
)


@dataclass(frozen=True)
class DateEvidence:
    """Recorded dates for one case. ``range`` kinds carry the two range
    endpoints; every other kind carries a single death / last-known-alive
    date. The precision-unknown kind is treated like an approximate date."""

    discovery_date: date
    death_date_kind: str
    death_date: date | None = None
    range_start: date | None = None
    range_end: date | None = None

    def __post_init__(self):
        if self.death_date_kind not in DEATH_DATE_KINDS:
            raise ValueError(f"unknown death date kind {self.death_date_kind!r}")
        if self.death_date_kind == "range":
            if self.range_start is None or self.range_end is None:
                raise ValueError("range kind needs both endpoints")
            if self.range_start > self.range_end:
                raise ValueError("range start after range end")
            if self.range_end > self.discovery_date:
                raise ValueError("range end after discovery")
        else:
            if self.death_date is None:
                raise ValueError(f"kind {self.death_date_kind!r} needs a death date")
            if self.death_date > self.discovery_date:
                raise ValueError("death date after discovery")


def compute_pmi(evidence: DateEvidence) -> float:
    """Elapsed days between the (possibly midpoint-imputed) death date and
    discovery. Ranges use the midpoint of their endpoints, which can land
    on a half day."""
    if evidence.death_date_kind == "range":
        span = evidence.range_end - evidence.range_start
        midpoint_seconds = (
            evidence.range_start - evidence.discovery_date
        ).total_seconds() + span.total_seconds() / 2.0
        return -midpoint_seconds / 86400.0
    return float((evidence.discovery_date - evidence.death_date).days)


@dataclass
class IngestionReport:
    accepted: int = 0
    errors: list[tuple[int, str]] = None

    def __post_init__(self):
        if self.errors is None:
            self.errors = []


def _parse_date(raw: str) -> date | None:
    raw = (raw or "").strip()
    return date.fromisoformat(raw) if raw else None


def parse_cases(
    text: str,
    covariates: CovariateSchema,
    characteristics: DecompositionSchema,
) -> tuple[list[CaseRecord], IngestionReport]:
    """Parse a case table. Malformed rows are reported with their line
    number and skipped; they never abort the whole file."""
    report = IngestionReport()
    cases: list[CaseRecord] = []
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return cases, report
    known = set(_BASE_COLUMNS) | set(covariates.names) | set(characteristics.characteristics)
    unknown_cols = [c for c in reader.fieldnames if c not in known]
    if unknown_cols:
        report.errors.append((0, f"unknown columns ignored: {unknown_cols}"))

    for line, row in enumerate(reader, start=2):
        try:
            case_id = (row.get("case_id") or "").strip()
            if not case_id:
                raise ValueError("missing case_id")
            raw_pmi = (row.get("pmi_days") or "").strip()
            if raw_pmi:
                pmi = float(raw_pmi)
                if pmi < 0:
                    raise ValueError("negative PMI")
            else:
                discovery = _parse_date(row.get("discovery_date"))
                if discovery is None:
                    pmi = None
                else:
                    kind = (row.get("death_date_kind") or "exact").strip() or "exact"
                    evidence = DateEvidence(
                        discovery_date=discovery,
                        death_date_kind=kind,
                        death_date=_parse_date(row.get("death_date")),
                        range_start=_parse_date(row.get("range_start")),
                        range_end=_parse_date(row.get("range_end")),
                    )
                    pmi = compute_pmi(evidence)
            levels = {}
            for name in covariates.names:
                raw = (row.get(name) or "").strip()
                if raw:
                    levels[name] = raw
            decomposition = {}
            for name in characteristics.characteristics:
                raw = (row.get(name) or "").strip()
                if raw == "":
                    continue
                if raw not in ("0", "1"):
                    raise ValueError(f"characteristic {name!r} must be 0, 1, or blank")
                decomposition[name] = raw == "1"
            record = CaseRecord(case_id, pmi, levels, decomposition)
            encode_case(record, covariates, characteristics)  # validates level names
            cases.append(record)
            report.accepted += 1
        except (ValueError, SchemaError) as exc:
            report.errors.append((line, str(exc)))
    return cases, report


def write_cases(
    cases: list[CaseRecord],
    covariates: CovariateSchema,
    characteristics: DecompositionSchema,
) -> str:
    """Serialize records to the case-table format (PMI goes to the
    ``pmi_days`` column; date columns stay blank)."""
    out = io.StringIO()
    columns = list(_BASE_COLUMNS) + list(covariates.names) + list(characteristics.characteristics)
    writer = csv.DictWriter(out, fieldnames=columns)
    writer.writeheader()
    for case in cases:
        row = {c: "" for c in columns}
        row["case_id"] = case.case_id
        if case.pmi_days is not None:
            row["pmi_days"] = repr(float(case.pmi_days))
        for name, level in case.covariate_levels.items():
            row[name] = level
        for name, value in case.decomposition.items():
            row[name] = "1" if value else "0"
        writer.writerow(row)
    return out.getvalue()


@dataclass(frozen=True)
class PmiLaw:
    """Sampling law for tau = log(1 + t): a normal truncated to
    [lower, upper]."""

    mean: float = 2.33
    sd: float = 1.53
    lower: float = 0.0
    upper: float | None = None

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        hi = np.inf if self.upper is None else (self.upper - self.mean) / self.sd
        lo = (self.lower - self.mean) / self.sd
        return truncnorm.rvs(lo, hi, loc=self.mean, scale=self.sd, size=count, random_state=rng)


@dataclass
class SyntheticSpec:
    """Generator inputs: true coefficients (one packed vector, or a matrix
    of draws to mix over, one row per case), the case count, per-covariate
    level frequencies (defaults to the schema's), and the tau law."""

    coefficients: np.ndarray
    num_cases: int
    frequencies: dict[str, tuple[float, ...]] | None = None
    pmi_law: PmiLaw = PmiLaw()

    def __post_init__(self):
        if self.num_cases <= 0:
            raise ValueError("need a positive case count")
        if self.frequencies is not None:
            for name, freqs in self.frequencies.items():
                if abs(sum(freqs) - 1.0) > 1e-9:
                    raise ValueError(f"frequencies for {name!r} must sum to 1")


def generate_synthetic(
    spec: SyntheticSpec,
    structure: ModelStructure,
    seed: int,
) -> list[CaseRecord]:
    """Forward-simulate cases: covariate levels from their frequencies, tau
    from the law, then each characteristic Bernoulli at its model
    probability. All characteristics come out observed."""
    rng = np.random.default_rng(seed)
    covs = structure.covariates
    chars = structure.characteristics
    n = spec.num_cases
    D = len(chars)

    level_draws = {}
    for cov in covs.covariates:
        freqs = None
        if spec.frequencies is not None and cov.name in spec.frequencies:
            freqs = np.asarray(spec.frequencies[cov.name], dtype=float)
        elif cov.frequencies is not None:
            freqs = np.asarray(cov.frequencies, dtype=float)
        if freqs is None:
            freqs = np.full(len(cov.levels), 1.0 / len(cov.levels))
        level_draws[cov.name] = rng.choice(len(cov.levels), size=n, p=freqs)

    tau = spec.pmi_law.sample(n, rng)
    coeff = np.atleast_2d(np.asarray(spec.coefficients, dtype=float))
    if coeff.shape[1] != structure.n_free:
        raise ValueError("coefficient vector does not match the model structure")
    row_for_case = (
        np.zeros(n, dtype=int) if coeff.shape[0] == 1 else rng.integers(0, coeff.shape[0], n)
    )

    cases: list[CaseRecord] = []
    uniform = rng.random((n, D))
    for i in range(n):
        levels = {
            cov.name: cov.levels[level_draws[cov.name][i]] for cov in covs.covariates
        }
        record = CaseRecord(f"syn-{i}", float(np.expm1(tau[i])), levels, {})
        enc = encode_case(record, covs, chars)
        from .model import level_design_row

        design_row = level_design_row(structure, enc.level_index)[None, :]
        probs = char_probs(structure, coeff[row_for_case[i]], design_row, np.array([tau[i]]))[0]
        record.decomposition = {
            chars.characteristics[d]: bool(uniform[i, d] < probs[d]) for d in range(D)
        }
        cases.append(record)
    return cases


# -- posterior effect tables ---------------------------------------------------

_KIND_OF_PREFIX = {"baseline_logit": "baseline_logit", "base_rate": "base_rate", "effect": "effect"}


def export_effects(
    samples: PosteriorSamples | np.ndarray,
    structure: ModelStructure,
    quantiles: tuple[float, ...] = (0.025, 0.25, 0.5, 0.75, 0.975),
) -> list[dict]:
    """One row per model parameter (baseline logit and base rate per
    characteristic, plus every mask-allowed level effect) with the
    requested posterior quantiles."""
    if not quantiles:
        raise ValueError("need at least one quantile")
    if any(not 0.0 < q < 1.0 for q in quantiles):
        raise ValueError("quantiles must lie strictly between 0 and 1")
    draws = samples.draws if isinstance(samples, PosteriorSamples) else np.asarray(samples)
    if draws.shape[1] != structure.n_free:
        raise ValueError("draws do not match the model structure")
    qs = np.quantile(draws, quantiles, axis=0)
    means = draws.mean(axis=0)
    D = structure.n_characteristics
    chars = structure.characteristics.characteristics
    rows = []
    for i, name in enumerate(structure.param_names):
        kind = name.split("[", 1)[0]
        if i < D:
            char, cov, level = chars[i], "", ""
        elif i < 2 * D:
            char, cov, level = chars[i - D], "", ""
        else:
            d, k = structure.beta_coords[i - 2 * D]
            c, lvl = structure.level_columns[k]
            char = chars[d]
            cov = structure.covariates.covariates[c].name
            level = structure.covariates.covariates[c].levels[lvl]
        row = {
            "name": name,
            "kind": kind,
            "characteristic": char,
            "covariate": cov,
            "level": level,
            "mean": float(means[i]),
        }
        for j, q in enumerate(quantiles):
            row[f"q{100 * q:g}"] = float(qs[j, i])
        rows.append(row)
    return rows


def effects_to_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()
