"""Batch entry points.

Subcommands: fit, predict, evaluate, eig-scan, simulate, export-effects,
serve. Outputs go to files; logs go to stderr. Exit codes: 0 success,
2 unreadable or invalid input, 3 convergence-diagnostics failure,
4 request over the compute budget caps.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bundle import (
    BudgetError,
    BundleError,
    before_after_payload,
    effects_payload,
    eig_scan_payload,
    load_bundle,
    predict_payload,
    save_bundle,
)
from .data_io import PmiLaw, SyntheticSpec, effects_to_csv, generate_synthetic, parse_cases, write_cases
from .evaluation import FoldPlan, run_cv
from .model import ModelStructure, encode_dataset
from .pmi import PmiError, PmiPrior
from .sampler import SamplerConfig, sample_posterior
from .schema import SchemaError, build_mask, default_schema_document, encode_case, load_schema

EXIT_OK, EXIT_PARSE, EXIT_DIAGNOSTICS, EXIT_BUDGET = 0, 2, 3, 4


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _load_vocab(schema_path: str | None):
    document = (
        Path(schema_path).read_text("utf-8") if schema_path else default_schema_document()
    )
    covs, chars = load_schema(document)
    return document, covs, chars


def _structure(variant: str, covs, chars, mask_path: str | None) -> ModelStructure:
    table = Path(mask_path).read_text("utf-8") if mask_path else None
    return ModelStructure(covs, chars, build_mask(variant, covs, chars, table))


def _read_cases(path: str, covs, chars):
    text = Path(path).read_text("utf-8")
    cases, report = parse_cases(text, covs, chars)
    for line, message in report.errors:
        _log(f"{path}:{line}: {message}")
    if not cases:
        raise SchemaError(f"no usable cases in {path}")
    return cases


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        num_chains=args.chains,
        warmup_iterations=args.warmup,
        samples_per_chain=args.samples,
        seed=args.seed,
        algorithm=args.algorithm,
        threads=args.threads,
    )


def cmd_fit(args) -> int:
    document, covs, chars = _load_vocab(args.schema)
    structure = _structure(args.variant, covs, chars, args.mask)
    cases = _read_cases(args.cases, covs, chars)
    with_pmi = [c for c in cases if c.pmi_days is not None]
    if len(with_pmi) < len(cases):
        _log(f"dropping {len(cases) - len(with_pmi)} cases without PMI")
    encoded = [
        encode_case(c, covs, chars) for c in sorted(with_pmi, key=lambda c: c.case_id)
    ]
    data = encode_dataset(structure, encoded)
    config = _sampler_config(args)
    _log(f"fitting {structure.n_free} parameters on {len(data)} cases ({args.variant} variant)")
    samples = sample_posterior(structure, data, config)
    report = samples.diagnostics
    save_bundle(
        Path(args.out), structure, samples, PmiPrior(), document,
        config=config, training_cases=with_pmi,
    )
    _log(
        f"max rhat {report.max_rhat:.4f}, min ess {report.min_ess:.0f}, "
        f"divergences {samples.divergences} -> {'pass' if report.passes else 'FAIL'}"
    )
    return EXIT_OK if report.passes else EXIT_DIAGNOSTICS


def cmd_predict(args) -> int:
    bundle = load_bundle(args.model)
    cases = _read_cases(args.case, bundle.covariates, bundle.characteristics)
    if len(cases) > 1:
        _log(f"{len(cases)} cases in file; predicting the first ({cases[0].case_id})")
    case = cases[0]
    payload = predict_payload(
        bundle, case.covariate_levels, case.decomposition, grid_points=args.grid_points
    )
    payload["case_id"] = case.case_id
    Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _log(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    document, covs, chars = _load_vocab(args.schema)
    structure = _structure(args.variant, covs, chars, args.mask)
    cases = _read_cases(args.cases, covs, chars)
    plan = FoldPlan.build([c.case_id for c in cases], k=args.k, seed=args.seed)
    config = _sampler_config(args)
    report = run_cv(
        cases, covs, chars, structure, config, plan,
        pmi_draw_limit=args.pmi_draws, keep_predictions=args.keep_predictions,
    )
    payload = report.to_dict()
    if args.keep_predictions:
        payload["predictions"] = report.predictions
    Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _log(
        f"macro AUC {report.macro_auc:.3f} +- {report.macro_auc_ci:.3f}, "
        f"R2(log) {report.r2:.3f} +- {report.r2_ci:.3f} -> {args.out}"
    )
    return EXIT_OK


def _design_list(path: str) -> list[dict]:
    raw = yaml.safe_load(Path(path).read_text("utf-8"))
    if isinstance(raw, list):
        return raw
    if isinstance(raw, dict) and "days" in raw:
        base = {k: v for k, v in raw.items() if k != "days"}
        return [dict(base, observation_day=float(day)) for day in raw["days"]]
    raise SchemaError("designs file must be a list of designs or a {days: [...]} grid")


def cmd_eig_scan(args) -> int:
    bundle = load_bundle(args.model)
    designs = _design_list(args.designs)
    payload = eig_scan_payload(
        bundle, args.target, designs,
        estimator=args.estimator,
        n_outer=args.n_outer,
        m_conditional=args.m_conditional,
        m_marginal=args.m_marginal,
        seed=args.seed,
    )
    Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    best = payload["rows"][payload["best_index"]]
    _log(
        f"best design: day {best['observation_day']} "
        f"({best['eig_per_cadaver']:.4f} nats/cadaver) -> {args.out}"
    )
    return EXIT_OK


def cmd_before_after(args) -> int:
    bundle = load_bundle(args.model)
    design = _design_list(args.designs)[args.design_index]
    refit = SamplerConfig(
        num_chains=args.chains, warmup_iterations=args.warmup,
        samples_per_chain=args.samples, seed=args.seed,
    )
    payload = before_after_payload(bundle, args.target, design, refit)
    Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _log(f"variance ratio {payload['variance_ratio']} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec_doc = yaml.safe_load(Path(args.spec).read_text("utf-8")) if args.spec else {}
    document, covs, chars = _load_vocab(spec_doc.get("schema") or args.schema)
    variant = spec_doc.get("variant", args.variant)
    structure = _structure(variant, covs, chars, None)
    seed = args.seed if args.seed is not None else int(spec_doc.get("seed", 0))
    n = args.n if args.n is not None else int(spec_doc.get("num_cases", 100))

    vec = structure.prior_mean_vector()
    overrides = spec_doc.get("coefficients")
    if overrides == "prior_draw" or overrides is None:
        rng = np.random.default_rng(int(spec_doc.get("coefficient_seed", seed + 1)))
        vec = vec + 2.0 * rng.standard_normal(structure.n_free)
    elif isinstance(overrides, dict):
        for name, value in overrides.items():
            vec[structure.param_index(name)] = float(value)
    else:
        raise SchemaError("coefficients must be 'prior_draw' or a name->value mapping")

    law_doc = spec_doc.get("pmi_law", {})
    law = PmiLaw(
        mean=float(law_doc.get("mean", 2.33)),
        sd=float(law_doc.get("sd", 1.53)),
        lower=float(law_doc.get("lower", 0.0)),
        upper=law_doc.get("upper"),
    )
    freqs = spec_doc.get("frequencies")
    if freqs is not None:
        freqs = {k: tuple(v) for k, v in freqs.items()}
    spec = SyntheticSpec(vec, n, frequencies=freqs, pmi_law=law)
    cases = generate_synthetic(spec, structure, seed)
    Path(args.out).write_text(write_cases(cases, covs, chars), encoding="utf-8")
    if args.truth_out:
        rows = "\n".join(f"{n},{repr(float(v))}" for n, v in zip(structure.param_names, vec))
        Path(args.truth_out).write_text("name,value\n" + rows + "\n", encoding="utf-8")
    _log(f"wrote {n} cases -> {args.out}")
    return EXIT_OK


def cmd_export_effects(args) -> int:
    bundle = load_bundle(args.model)
    quantiles = tuple(float(q) for q in args.quantiles.split(",") if q.strip())
    payload = effects_payload(bundle, quantiles)
    Path(args.out).write_text(effects_to_csv(payload["rows"]), encoding="utf-8")
    _log(f"wrote {len(payload['rows'])} effect rows -> {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:  # pragma: no cover - blocking server
    import uvicorn

    from .service import create_app

    app = create_app(load_bundle(args.model))
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _add_sampler_flags(p, chains=4, warmup=1000, samples=1000):
    p.add_argument("--chains", type=int, default=chains)
    p.add_argument("--warmup", type=int, default=warmup)
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algorithm", choices=["hmc", "random_walk"], default="hmc")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taphos", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model variant to a case file")
    p.add_argument("--cases", required=True)
    p.add_argument("--variant", choices=["empty", "strict", "full"], required=True)
    p.add_argument("--schema")
    p.add_argument("--mask", help="strict-table override (defaults to the bundled table)")
    _add_sampler_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="elapsed-time posterior for one case")
    p.add_argument("--model", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-points", type=int, default=1001)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="k-fold cross-validated metrics")
    p.add_argument("--cases", required=True)
    p.add_argument("--variant", choices=["empty", "strict", "full"], required=True)
    p.add_argument("--schema")
    p.add_argument("--mask")
    p.add_argument("--k", type=int, default=5)
    _add_sampler_flags(p, chains=2, warmup=400, samples=400)
    p.add_argument("--pmi-draws", type=int, default=500)
    p.add_argument("--keep-predictions", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("eig-scan", help="expected information gain over a design grid")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True, nargs="+")
    p.add_argument("--designs", required=True)
    p.add_argument("--estimator", choices=["naive", "low_variance"], default="naive")
    p.add_argument("--n-outer", type=int, default=2000)
    p.add_argument("--m-conditional", type=int, default=1000)
    p.add_argument("--m-marginal", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eig_scan)

    p = sub.add_parser("before-after", help="target posterior before/after a design")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True, nargs="+")
    p.add_argument("--designs", required=True)
    p.add_argument("--design-index", type=int, default=0)
    _add_sampler_flags(p, chains=2, warmup=300, samples=300)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_before_after)

    p = sub.add_parser("simulate", help="generate synthetic cases")
    p.add_argument("--spec", help="YAML generator spec")
    p.add_argument("--schema")
    p.add_argument("--variant", choices=["empty", "strict", "full"], default="empty")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", help="write the generating coefficients here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-effects", help="posterior quantiles for every effect")
    p.add_argument("--model", required=True)
    p.add_argument("--quantiles", default="0.025,0.25,0.5,0.75,0.975")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_effects)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--model", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BudgetError as exc:
        _log(f"budget error: {exc}")
        return EXIT_BUDGET
    except (SchemaError, BundleError, PmiError, FileNotFoundError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_PARSE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
