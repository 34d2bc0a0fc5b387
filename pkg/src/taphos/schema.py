"""Case vocabulary: covariates with levels, decomposition characteristics,
and the per-variant interaction masks that decide which covariate effects
exist for which characteristic.

Everything here is immutable after loading and safe to share across threads.
The default vocabulary and the strict mask ship as data files next to this
module so alternate ontologies can be loaded without code changes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

VARIANTS = ("empty", "strict", "full")


class SchemaError(ValueError):
    """Raised for malformed vocabulary documents, masks, or case records."""


@dataclass(frozen=True)
class Covariate:
    """One categorical case variable. Binary variables are 2-level
    categoricals with "Absent" as the reference level."""

    name: str
    levels: tuple[str, ...]
    reference_level_index: int
    frequencies: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.levels) < 2:
            raise SchemaError(f"covariate {self.name!r} needs >= 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"covariate {self.name!r} has duplicate levels")
        if not 0 <= self.reference_level_index < len(self.levels):
            raise SchemaError(f"covariate {self.name!r}: reference index out of range")
        if len(self.levels) == 2 and self.reference_level.lower() != "absent":
            raise SchemaError(
                f"binary covariate {self.name!r} must use 'Absent' as reference"
            )
        if self.frequencies is not None:
            if len(self.frequencies) != len(self.levels):
                raise SchemaError(f"covariate {self.name!r}: frequency list length mismatch")
            total = float(sum(self.frequencies))
            if total <= 0:
                raise SchemaError(f"covariate {self.name!r}: frequencies must sum > 0")
            object.__setattr__(
                self, "frequencies", tuple(f / total for f in self.frequencies)
            )

    @property
    def reference_level(self) -> str:
        return self.levels[self.reference_level_index]

    def level_index(self, name: str) -> int:
        try:
            return self.levels.index(name)
        except ValueError:
            raise SchemaError(f"covariate {self.name!r} has no level {name!r}") from None

    def missing_level_index(self) -> int:
        # missing / "unknown" answers collapse to the Unknown level when the
        # covariate has one, otherwise to the reference level
        for i, lvl in enumerate(self.levels):
            if lvl.lower() == "unknown":
                return i
        return self.reference_level_index


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...]
    version: str = "unversioned"
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate covariate names")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def __len__(self) -> int:
        return len(self.covariates)

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown covariate {name!r}") from None

    def covariate(self, name: str) -> Covariate:
        return self.covariates[self.index_of(name)]


@dataclass(frozen=True)
class DecompositionSchema:
    characteristics: tuple[str, ...]
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.characteristics)) != len(self.characteristics):
            raise SchemaError("duplicate characteristic names")
        object.__setattr__(
            self, "_index", {n: i for i, n in enumerate(self.characteristics)}
        )

    def __len__(self) -> int:
        return len(self.characteristics)

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown characteristic {name!r}") from None


@dataclass(frozen=True)
class InteractionMask:
    """Boolean (characteristic x covariate) matrix of allowed effects."""

    variant_name: str
    allowed: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.allowed, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, "allowed", arr)

    def allows(self, char_index: int, cov_index: int) -> bool:
        return bool(self.allowed[char_index, cov_index])


@dataclass
class CaseRecord:
    """One case: an optional PMI in days, covariate answers by name, and
    per-characteristic observations (absent entries are simply unobserved)."""

    case_id: str
    pmi_days: float | None
    covariate_levels: dict[str, str]
    decomposition: dict[str, bool]

    def __post_init__(self):
        if self.pmi_days is not None and self.pmi_days < 0:
            raise SchemaError(f"case {self.case_id!r}: negative PMI")


@dataclass(frozen=True)
class EncodedCase:
    """Schema-resolved view of a CaseRecord: one level index per covariate
    plus aligned observation arrays. Observation values may be fractional
    (used for expected-outcome augmentation); real records are 0/1."""

    case_id: str
    level_index: np.ndarray      # (n_covariates,) int
    pmi_days: float | None
    observed: np.ndarray         # (n_characteristics,) bool
    values: np.ndarray           # (n_characteristics,) float, 0 where unobserved

    @property
    def log1p_pmi(self) -> float | None:
        return None if self.pmi_days is None else float(np.log1p(self.pmi_days))


def load_schema(document: str) -> tuple[CovariateSchema, DecompositionSchema]:
    """Parse a vocabulary document (YAML text) into the two schemas.

    The document must contain ``covariates`` (each with ``name``, ``levels``,
    ``reference`` and optional ``frequencies``) and ``characteristics``.
    Ordering in the document is preserved everywhere.
    """
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparseable schema document: {exc}") from exc
    if not isinstance(doc, dict) or "covariates" not in doc or "characteristics" not in doc:
        raise SchemaError("schema document needs 'covariates' and 'characteristics'")

    covs = []
    for entry in doc["covariates"]:
        levels = tuple(str(v) for v in entry["levels"])
        ref = str(entry.get("reference", ""))
        if ref not in levels:
            raise SchemaError(f"covariate {entry.get('name')!r}: missing reference level")
        freqs = entry.get("frequencies")
        covs.append(
            Covariate(
                name=str(entry["name"]),
                levels=levels,
                reference_level_index=levels.index(ref),
                frequencies=None if freqs is None else tuple(float(f) for f in freqs),
            )
        )
    chars = tuple(str(c) for c in doc["characteristics"])
    return (
        CovariateSchema(tuple(covs), version=str(doc.get("version", "unversioned"))),
        DecompositionSchema(chars),
    )


def default_schema_document() -> str:
    return resources.files("taphos.data").joinpath("schema.yaml").read_text("utf-8")


def default_strict_table() -> str:
    return resources.files("taphos.data").joinpath("strict_mask.csv").read_text("utf-8")


def load_default_schema() -> tuple[CovariateSchema, DecompositionSchema]:
    return load_schema(default_schema_document())


def build_mask(
    variant_name: str,
    covariates: CovariateSchema,
    characteristics: DecompositionSchema,
    strict_table: str | None = None,
) -> InteractionMask:
    """Build the effect mask for one model variant.

    ``strict_table`` is CSV text (lines starting with ``#`` are comments) with
    a ``characteristic`` column and one 0/1 column per covariate; it is only
    consulted for the strict variant and defaults to the bundled table.
    """
    if variant_name not in VARIANTS:
        raise SchemaError(f"unknown variant {variant_name!r}; expected one of {VARIANTS}")
    shape = (len(characteristics), len(covariates))
    if variant_name == "empty":
        return InteractionMask("empty", np.zeros(shape, dtype=bool))
    if variant_name == "full":
        return InteractionMask("full", np.ones(shape, dtype=bool))

    if strict_table is None:
        strict_table = default_strict_table()
    lines = [ln for ln in strict_table.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    if reader.fieldnames is None or "characteristic" not in reader.fieldnames:
        raise SchemaError("strict table needs a 'characteristic' column")
    for col in reader.fieldnames:
        if col != "characteristic":
            covariates.index_of(col)  # unknown covariate -> error

    allowed = np.zeros(shape, dtype=bool)
    seen = set()
    for row in reader:
        d = characteristics.index_of(row["characteristic"])
        seen.add(row["characteristic"])
        for col, val in row.items():
            if col == "characteristic" or val is None:
                continue
            if val.strip() not in ("0", "1"):
                raise SchemaError(f"strict table: bad cell {val!r} for {row['characteristic']!r}")
            if val.strip() == "1":
                allowed[d, covariates.index_of(col)] = True
    missing = set(characteristics.characteristics) - seen
    if missing:
        raise SchemaError(f"strict table missing rows for: {sorted(missing)}")
    return InteractionMask("strict", allowed)


def _resolve_level(cov: Covariate, raw: str | None) -> int:
    if raw is None or raw.strip() == "":
        return cov.missing_level_index()
    name = raw.strip()
    if name in cov.levels:
        idx = cov.levels.index(name)
    else:
        lowered = [lvl.lower() for lvl in cov.levels]
        if name.lower() in lowered:
            idx = lowered.index(name.lower())
        elif name.lower() == "unknown":
            idx = cov.missing_level_index()
        else:
            raise SchemaError(f"covariate {cov.name!r} has no level {raw!r}")
    return idx


def encode_case(
    case: CaseRecord,
    covariates: CovariateSchema,
    characteristics: DecompositionSchema,
) -> EncodedCase:
    """Resolve a CaseRecord against the schemas.

    Missing or "unknown" covariate answers collapse per the covariate's
    missing rule (Unknown level if present, else reference). Unobserved
    characteristics stay unobserved. Unknown level names raise.
    """
    for name in case.covariate_levels:
        covariates.index_of(name)
    for name in case.decomposition:
        characteristics.index_of(name)

    idx = np.empty(len(covariates), dtype=np.int64)
    for c, cov in enumerate(covariates.covariates):
        idx[c] = _resolve_level(cov, case.covariate_levels.get(cov.name))

    observed = np.zeros(len(characteristics), dtype=bool)
    values = np.zeros(len(characteristics), dtype=float)
    for name, val in case.decomposition.items():
        if val is None:
            continue
        d = characteristics.index_of(name)
        observed[d] = True
        values[d] = float(val)
    idx.setflags(write=False)
    observed.setflags(write=False)
    values.setflags(write=False)
    return EncodedCase(case.case_id, idx, case.pmi_days, observed, values)


def decode_case(
    encoded: EncodedCase,
    covariates: CovariateSchema,
    characteristics: DecompositionSchema,
) -> CaseRecord:
    """Inverse of encode_case up to the missing-answer substitutions, which
    are idempotent: decode(encode(decode(encode(x)))) == decode(encode(x))."""
    levels = {
        cov.name: cov.levels[encoded.level_index[c]]
        for c, cov in enumerate(covariates.covariates)
    }
    decomposition = {
        characteristics.characteristics[d]: bool(round(encoded.values[d]))
        for d in range(len(characteristics))
        if encoded.observed[d]
    }
    return CaseRecord(encoded.case_id, encoded.pmi_days, levels, decomposition)
