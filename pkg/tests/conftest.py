import numpy as np
import pytest

from taphos import schema as sch
from taphos.model import ModelStructure

TINY_DOC = """
version: test-1
covariates:
  - name: Larva
    levels: [Absent, Present]
    reference: Absent
    frequencies: [0.7, 0.3]
  - name: Site
    levels: [Surface, Water, Unknown]
    reference: Surface
    frequencies: [0.6, 0.3, 0.1]
  - name: Age
    levels: [Infant, Adult]
    reference: Adult
    frequencies: [0.05, 0.95]
characteristics:
  - Bloat
  - Marbling
  - Dry bone
"""

# Age here is a 2-level covariate whose reference is not literally "Absent";
# the loader only enforces the Absent convention for binary flags, so give it
# a third level to keep it categorical.
TINY_DOC = TINY_DOC.replace(
    "levels: [Infant, Adult]", "levels: [Infant, Child, Adult]"
).replace("frequencies: [0.05, 0.95]", "frequencies: [0.03, 0.02, 0.95]")

TINY_STRICT = """\
characteristic,Larva,Site,Age
Bloat,1,1,0
Marbling,0,0,0
Dry bone,1,0,0
"""


@pytest.fixture(scope="session")
def tiny_schemas():
    return sch.load_schema(TINY_DOC)


@pytest.fixture(scope="session")
def default_schemas():
    return sch.load_default_schema()


def make_structure(covs, chars, variant, strict_table=None):
    return ModelStructure(covs, chars, sch.build_mask(variant, covs, chars, strict_table))


@pytest.fixture(scope="session")
def tiny_full(tiny_schemas):
    covs, chars = tiny_schemas
    return make_structure(covs, chars, "full")


@pytest.fixture(scope="session")
def tiny_empty(tiny_schemas):
    covs, chars = tiny_schemas
    return make_structure(covs, chars, "empty")


@pytest.fixture(scope="session")
def tiny_strict(tiny_schemas):
    covs, chars = tiny_schemas
    return make_structure(covs, chars, "strict", TINY_STRICT)


def random_cases(covs, chars, n, rng, with_pmi=True, observe_prob=0.9):
    """Unstructured random CaseRecords for plumbing tests (not model-law)."""
    cases = []
    for i in range(n):
        levels = {
            c.name: c.levels[rng.integers(len(c.levels))] for c in covs.covariates
        }
        decomp = {
            name: bool(rng.integers(2))
            for name in chars.characteristics
            if rng.random() < observe_prob
        }
        pmi = float(np.expm1(rng.normal(2.0, 1.0))) if with_pmi else None
        if pmi is not None and pmi < 0:
            pmi = 0.0
        cases.append(sch.CaseRecord(f"case-{i}", pmi, levels, decomp))
    return cases


def encode_all(covs, chars, cases):
    return [sch.encode_case(c, covs, chars) for c in cases]


DEMO_DOC = """
version: demo-1
covariates:
  - name: Larva
    levels: [Absent, Present]
    reference: Absent
    frequencies: [0.6, 0.4]
characteristics:
  - Bloat
  - Skin slippage
"""


@pytest.fixture(scope="session")
def fitted_bundle_dir(tmp_path_factory):
    """A small diagnostics-passing bundle fitted on synthetic cases."""
    import numpy as np

    from taphos import data_io as dio
    from taphos import model as mdl
    from taphos.bundle import save_bundle
    from taphos.pmi import PmiPrior
    from taphos.sampler import SamplerConfig, sample_posterior

    covs, chars = sch.load_schema(DEMO_DOC)
    structure = make_structure(covs, chars, "full")
    truth = np.array([-1.8, -1.2, 0.9, 0.6, 0.8, 0.3])
    cases = dio.generate_synthetic(dio.SyntheticSpec(truth, 220), structure, seed=5)
    encoded = [
        sch.encode_case(c, covs, chars) for c in sorted(cases, key=lambda c: c.case_id)
    ]
    data = mdl.encode_dataset(structure, encoded)
    config = SamplerConfig(num_chains=2, warmup_iterations=350, samples_per_chain=350, seed=9)
    samples = sample_posterior(structure, data, config)
    assert samples.diagnostics.passes
    out = tmp_path_factory.mktemp("bundle")
    save_bundle(out, structure, samples, PmiPrior(), DEMO_DOC, config=config,
                training_cases=cases)
    return out
