"""Fitted-model bundles: a directory holding the vocabulary, the effect
mask, the posterior draws with their diagnostics, and the tau prior.

The payload builders at the bottom are the single implementation behind
both the command-line tools and the HTTP service, so the two surfaces
return identical numbers for identical inputs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .eig import DesignSpec, TargetSelection, before_after_posterior, design_scan
from .model import ModelStructure
from .pmi import GridConfig, PmiPrior, pmi_posterior
from .sampler import PosteriorSamples, SamplerConfig, diagnostics
from .schema import (
    CaseRecord,
    CovariateSchema,
    DecompositionSchema,
    InteractionMask,
    SchemaError,
    encode_case,
    load_schema,
)


class BundleError(RuntimeError):
    pass


@dataclass
class ModelBundle:
    covariates: CovariateSchema
    characteristics: DecompositionSchema
    structure: ModelStructure
    samples: PosteriorSamples
    prior: PmiPrior
    version: str
    schema_document: str
    training_cases: list[CaseRecord] | None = None
    _mvn_cache: dict = field(default_factory=dict, repr=False)

    @property
    def variant(self) -> str:
        return self.structure.mask.variant_name

    def effect_names(self) -> list[str]:
        return list(self.structure.param_names)

    def training_data(self):
        from .model import encode_dataset

        if self.training_cases is None:
            raise BundleError("bundle was saved without its training cases")
        encoded = [
            encode_case(c, self.covariates, self.characteristics)
            for c in sorted(self.training_cases, key=lambda c: c.case_id)
        ]
        return encode_dataset(self.structure, encoded)


def _mask_to_csv(structure: ModelStructure) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["characteristic"] + list(structure.covariates.names))
    for d, name in enumerate(structure.characteristics.characteristics):
        writer.writerow([name] + [int(v) for v in structure.mask.allowed[d]])
    return out.getvalue()


def _mask_from_csv(text: str, covs: CovariateSchema, chars: DecompositionSchema, variant: str) -> InteractionMask:
    reader = csv.DictReader(io.StringIO(text))
    allowed = np.zeros((len(chars), len(covs)), dtype=bool)
    for row in reader:
        d = chars.index_of(row["characteristic"])
        for col, val in row.items():
            if col != "characteristic" and val is not None:
                allowed[d, covs.index_of(col)] = val.strip() == "1"
    return InteractionMask(variant, allowed)


def save_bundle(
    directory: str | Path,
    structure: ModelStructure,
    samples: PosteriorSamples,
    prior: PmiPrior,
    schema_document: str,
    config: SamplerConfig | None = None,
    version: str | None = None,
    training_cases: list[CaseRecord] | None = None,
) -> Path:
    """Write a fitted model to a directory: schema.yaml, mask.csv,
    samples.csv (one draw per line, named columns plus the chain id), and
    meta.json with the diagnostics summary. Training cases, when given,
    are kept alongside so knowledge-preview refits can rebuild the fit
    dataset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "schema.yaml").write_text(schema_document, encoding="utf-8")
    (directory / "mask.csv").write_text(_mask_to_csv(structure), encoding="utf-8")
    if training_cases is not None:
        from .data_io import write_cases

        (directory / "cases.csv").write_text(
            write_cases(training_cases, structure.covariates, structure.characteristics),
            encoding="utf-8",
        )

    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["chain"] + list(samples.param_names))
    for chain_id, row in zip(samples.chain_ids, samples.draws):
        writer.writerow([int(chain_id)] + [repr(float(v)) for v in row])
    (directory / "samples.csv").write_text(out.getvalue(), encoding="utf-8")

    report = samples.diagnostics or diagnostics(samples)
    meta = {
        "version": version or f"taphos-{__version__}",
        "variant": structure.mask.variant_name,
        "prior": {"mean": prior.mean, "sd": prior.sd},
        "num_chains": samples.num_chains,
        "samples_per_chain": samples.samples_per_chain,
        "accept_rates": list(samples.accept_rates),
        "divergences": samples.divergences,
        "diagnostics": report.to_dict(),
        "sampler_config": None if config is None else {
            k: v for k, v in config.__dict__.items()
        },
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return directory


def load_bundle(directory: str | Path, require_pass: bool = True) -> ModelBundle:
    directory = Path(directory)
    try:
        schema_document = (directory / "schema.yaml").read_text("utf-8")
        mask_text = (directory / "mask.csv").read_text("utf-8")
        samples_text = (directory / "samples.csv").read_text("utf-8")
        meta = json.loads((directory / "meta.json").read_text("utf-8"))
    except FileNotFoundError as exc:
        raise BundleError(f"not a model bundle: {exc}") from exc

    covs, chars = load_schema(schema_document)
    mask = _mask_from_csv(mask_text, covs, chars, meta["variant"])
    structure = ModelStructure(covs, chars, mask)

    reader = csv.reader(io.StringIO(samples_text))
    header = next(reader)
    if tuple(header[1:]) != structure.param_names:
        raise BundleError("sample columns do not match the model structure")
    chain_ids, rows = [], []
    for row in reader:
        chain_ids.append(int(row[0]))
        rows.append([float(v) for v in row[1:]])
    draws = np.asarray(rows)
    chain_ids = np.asarray(chain_ids)
    num_chains = meta["num_chains"]
    samples = PosteriorSamples(
        draws=draws,
        chain_ids=chain_ids,
        param_names=structure.param_names,
        num_chains=num_chains,
        samples_per_chain=meta["samples_per_chain"],
        accept_rates=tuple(meta.get("accept_rates", [])),
        step_sizes=tuple(meta.get("step_sizes", [0.0] * num_chains)),
        divergences=meta.get("divergences", 0),
    )
    samples.diagnostics = diagnostics(samples)
    if require_pass and not samples.diagnostics.passes:
        raise BundleError("bundle samples do not pass convergence diagnostics")
    prior = PmiPrior(**meta["prior"])
    training_cases = None
    cases_file = directory / "cases.csv"
    if cases_file.exists():
        from .data_io import parse_cases

        training_cases, report = parse_cases(cases_file.read_text("utf-8"), covs, chars)
        if report.errors:
            raise BundleError(f"bundle training cases are invalid: {report.errors[:3]}")
    return ModelBundle(
        covs, chars, structure, samples, prior, meta["version"], schema_document,
        training_cases,
    )


# -- shared request payloads ------------------------------------------------------

EIG_CAPS = {"n_outer": 20_000, "m_conditional": 10_000, "m_marginal": 10_000}


class BudgetError(ValueError):
    pass


def schema_payload(bundle: ModelBundle) -> dict:
    return {
        "version": bundle.version,
        "variant": bundle.variant,
        "covariates": [
            {
                "name": c.name,
                "levels": list(c.levels),
                "reference_level_index": c.reference_level_index,
            }
            for c in bundle.covariates.covariates
        ],
        "characteristics": list(bundle.characteristics.characteristics),
        "effect_names": bundle.effect_names(),
        "eig_caps": EIG_CAPS,
        "prior": {"mean": bundle.prior.mean, "sd": bundle.prior.sd},
    }


def predict_payload(
    bundle: ModelBundle,
    covariate_levels: dict[str, str],
    observations: dict[str, bool],
    interval_masses: tuple[float, ...] = (0.5, 0.9),
    grid_points: int = 1001,
) -> dict:
    """Elapsed-time posterior for one case, ready to plot."""
    case = CaseRecord("request", None, dict(covariate_levels), dict(observations))
    encoded = encode_case(case, bundle.covariates, bundle.characteristics)
    posterior = pmi_posterior(
        encoded,
        bundle.samples,
        bundle.structure,
        bundle.prior,
        GridConfig(num_points=grid_points),
    )
    intervals = {}
    for mass in interval_masses:
        lo, hi = posterior.interval(mass)
        intervals[f"{round(100 * mass):d}"] = {
            "tau": [lo, hi],
            "days": [float(np.expm1(lo)), float(np.expm1(hi))],
        }
    return {
        "version": bundle.version,
        "tau_grid": posterior.tau_grid.tolist(),
        "density": posterior.density.tolist(),
        "mean_tau": posterior.mean_tau(),
        "mean_days": posterior.mean_days(),
        "median_days": float(np.expm1(posterior.quantile(0.5))),
        "intervals": intervals,
    }


def resolve_target(bundle: ModelBundle, names: list[str] | str) -> TargetSelection:
    if isinstance(names, str):
        names = [names]
    return TargetSelection.by_names(bundle.structure, names)


def parse_design(bundle: ModelBundle, raw: dict) -> DesignSpec:
    levels = raw.get("covariate_levels") or {}
    for name, level in levels.items():
        bundle.covariates.covariate(name).level_index(level)
    tracked = raw.get("tracked_characteristics")
    if tracked is not None:
        for name in tracked:
            bundle.characteristics.index_of(name)
        tracked = tuple(tracked)
    return DesignSpec(
        num_cadavers=int(raw["num_cadavers"]),
        observation_day=float(raw["observation_day"]),
        covariate_levels=dict(levels) or None,
        tracked_characteristics=tracked,
    )


def eig_scan_payload(
    bundle: ModelBundle,
    target_names: list[str] | str,
    designs: list[dict],
    estimator: str = "naive",
    n_outer: int = 2_000,
    m_conditional: int = 1_000,
    m_marginal: int = 1_000,
    seed: int = 0,
) -> dict:
    budgets = {"n_outer": n_outer, "m_conditional": m_conditional, "m_marginal": m_marginal}
    for key, cap in EIG_CAPS.items():
        if budgets[key] > cap:
            raise BudgetError(f"{key}={budgets[key]} exceeds the server cap {cap}")
    if estimator not in ("naive", "low_variance"):
        raise SchemaError(f"unknown estimator {estimator!r}")
    target = resolve_target(bundle, target_names)
    specs = [parse_design(bundle, d) for d in designs]
    result = design_scan(
        bundle.structure,
        bundle.samples,
        target,
        specs,
        estimator=estimator,
        n_outer=n_outer,
        m_conditional=m_conditional,
        m_marginal=m_marginal,
        seed=seed,
    )
    payload = result.to_dict()
    payload["version"] = bundle.version
    payload["target"] = [bundle.structure.param_names[i] for i in target.indices]
    payload["seed"] = seed
    return payload


def before_after_payload(
    bundle: ModelBundle,
    target_names: list[str] | str,
    design: dict,
    refit_config: SamplerConfig,
) -> dict:
    target = resolve_target(bundle, target_names)
    spec = parse_design(bundle, design)
    data = bundle.training_data() if spec.num_cadavers > 0 else None
    result = before_after_posterior(
        bundle.structure, data, bundle.samples, target, spec, refit_config
    )
    payload = result.to_dict()
    payload["version"] = bundle.version
    return payload


def effects_payload(bundle: ModelBundle, quantiles: tuple[float, ...]) -> dict:
    from .data_io import export_effects

    rows = export_effects(bundle.samples, bundle.structure, quantiles)
    return {"version": bundle.version, "rows": rows}
