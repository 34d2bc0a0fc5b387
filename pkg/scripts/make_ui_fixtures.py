"""Regenerate the workbench parity fixtures.

Builds a small deterministic model bundle, runs the same request through
the command-line `predict` and the HTTP service, and records the design
scan and zero-cadaver before/after payloads. The workbench tests assert
the UI renders these payloads verbatim.

Usage: python scripts/make_ui_fixtures.py
"""

import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "frontend" / "tests" / "fixtures"

DEMO_DOC = """
version: fixture-1
covariates:
  - name: Larva
    levels: [Absent, Present]
    reference: Absent
    frequencies: [0.6, 0.4]
characteristics:
  - Bloat
  - Skin slippage
"""


def main() -> None:
    import numpy as np
    from fastapi.testclient import TestClient

    from taphos import cli
    from taphos import data_io as dio
    from taphos import model as mdl
    from taphos import schema as sch
    from taphos.bundle import load_bundle, save_bundle
    from taphos.pmi import PmiPrior
    from taphos.sampler import SamplerConfig, sample_posterior
    from taphos.service import create_app

    FIXTURES.mkdir(parents=True, exist_ok=True)
    covs, chars = sch.load_schema(DEMO_DOC)
    structure = mdl.ModelStructure(covs, chars, sch.build_mask("full", covs, chars))
    truth = np.array([-3.2, -2.8, 0.55, 0.5, 0.6, 0.2])
    cases = dio.generate_synthetic(dio.SyntheticSpec(truth, 220), structure, seed=21)
    encoded = [
        sch.encode_case(c, covs, chars) for c in sorted(cases, key=lambda c: c.case_id)
    ]
    data = mdl.encode_dataset(structure, encoded)
    config = SamplerConfig(num_chains=2, warmup_iterations=350, samples_per_chain=350, seed=22)
    samples = sample_posterior(structure, data, config)
    assert samples.diagnostics.passes

    with tempfile.TemporaryDirectory() as tmp:
        bundle_dir = Path(tmp) / "bundle"
        save_bundle(bundle_dir, structure, samples, PmiPrior(), DEMO_DOC,
                    config=config, training_cases=cases)

        case_file = Path(tmp) / "case.csv"
        case_file.write_text(
            "case_id,pmi_days,Larva,Bloat,Skin slippage\nfixture-case,,Present,1,0\n",
            encoding="utf-8",
        )
        cli_out = Path(tmp) / "predict.json"
        code = cli.main([
            "predict", "--model", str(bundle_dir), "--case", str(case_file),
            "--out", str(cli_out),
        ])
        assert code == 0
        cli_payload = json.loads(cli_out.read_text())
        (FIXTURES / "predict_cli.json").write_text(json.dumps(cli_payload, indent=1))

        client = TestClient(create_app(load_bundle(bundle_dir)))
        api_payload = client.post(
            "/v1/predict-pmi",
            json={"covariates": {"Larva": "Present"},
                  "observations": {"Bloat": True, "Skin slippage": False}},
        ).json()
        (FIXTURES / "predict_api.json").write_text(json.dumps(api_payload, indent=1))

        eig_payload = client.post("/v1/eig", json={
            "target": "effect[Bloat|Larva=Present]",
            "designs": [
                {"num_cadavers": 4, "observation_day": day,
                 "covariate_levels": {"Larva": "Present"},
                 "tracked_characteristics": ["Bloat"]}
                for day in (0.0, 10.0, 30.0)
            ],
            "estimator": "low_variance",
            "n_outer": 600, "m_conditional": 300, "m_marginal": 300, "seed": 5,
        }).json()
        (FIXTURES / "eig_api.json").write_text(json.dumps(eig_payload, indent=1))

        ba_payload = client.post("/v1/before-after", json={
            "target": "effect[Bloat|Larva=Present]",
            "design": {"num_cadavers": 0, "observation_day": 10.0},
        }).json()
        (FIXTURES / "before_after_zero.json").write_text(json.dumps(ba_payload, indent=1))

    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    sys.exit(main())
