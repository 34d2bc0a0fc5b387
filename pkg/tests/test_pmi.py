import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm, truncnorm

from taphos import model as mdl
from taphos import pmi
from taphos import schema as sch
from taphos.sampler import PosteriorSamples

from conftest import make_structure


def truncated_prior(prior: pmi.PmiPrior, upper: float):
    a = (0.0 - prior.mean) / prior.sd
    b = (upper - prior.mean) / prior.sd
    return truncnorm(a, b, loc=prior.mean, scale=prior.sd)


@pytest.fixture(scope="module")
def one_char_structure():
    covs, chars = sch.load_schema(
        "covariates:\n  - {name: Flag, levels: [Absent, Present], reference: Absent}\n"
        "characteristics: [Trait]\n"
    )
    return make_structure(covs, chars, "empty"), covs, chars


def empty_case(covs, chars, observations=None):
    return sch.encode_case(sch.CaseRecord("c", None, {}, observations or {}), covs, chars)


class TestFlatLikelihood:
    def test_no_observations_reproduces_truncated_prior(self, one_char_structure):
        structure, covs, chars = one_char_structure
        prior = pmi.PmiPrior()
        grid = pmi.GridConfig()
        draws = np.random.default_rng(0).normal(size=(50, structure.n_free))
        post = pmi.pmi_posterior(empty_case(covs, chars), draws, structure, prior, grid)
        tau = post.tau_grid
        expected = np.exp(prior.log_density(tau))
        w = np.zeros_like(tau)
        w[:-1] += 0.5 * np.diff(tau)
        w[1:] += 0.5 * np.diff(tau)
        expected /= expected @ w
        np.testing.assert_allclose(post.density, expected, atol=1e-10)

    def test_prior_only_median_days(self, one_char_structure):
        # the tau grid starts at zero, so prior-only summaries follow the
        # zero-truncated normal, not the untruncated one
        structure, covs, chars = one_char_structure
        prior = pmi.PmiPrior()
        grid = pmi.GridConfig()
        draws = np.zeros((10, structure.n_free))
        post = pmi.pmi_posterior(empty_case(covs, chars), draws, structure, prior, grid)
        oracle = truncated_prior(prior, prior.mean + 5 * prior.sd)
        assert post.quantile(0.5) == pytest.approx(oracle.ppf(0.5), rel=5e-4)
        days = np.expm1(post.quantile(0.5))
        assert days == pytest.approx(np.expm1(oracle.ppf(0.5)), rel=1e-3)
        # untruncated reading would give expm1(2.33) ~ 9.28; truncation shifts up
        assert days > np.expm1(2.33)

    def test_prior_only_interval_matches_truncnorm(self, one_char_structure):
        structure, covs, chars = one_char_structure
        prior = pmi.PmiPrior()
        draws = np.zeros((5, structure.n_free))
        post = pmi.pmi_posterior(empty_case(covs, chars), draws, structure, prior)
        oracle = truncated_prior(prior, prior.mean + 5 * prior.sd)
        lo, hi = post.interval(0.9)
        assert lo == pytest.approx(oracle.ppf(0.05), rel=5e-3, abs=5e-3)
        assert hi == pytest.approx(oracle.ppf(0.95), rel=5e-3)


class TestSingleCharacteristic:
    def test_present_late_marker_shifts_posterior_up(self, one_char_structure):
        structure, covs, chars = one_char_structure
        prior = pmi.PmiPrior()
        vec = np.array([-2.0, 1.0])  # baseline logit -2, unit rate
        case = empty_case(covs, chars, {"Trait": True})
        post = pmi.pmi_posterior(case, vec[None, :], structure, prior)
        assert post.mean_tau() > prior.mean

    def test_matches_quadrature_oracle(self, one_char_structure):
        structure, covs, chars = one_char_structure
        prior = pmi.PmiPrior()
        gamma, rate = -2.0, 1.0
        upper = prior.mean + 5 * prior.sd

        def integrand(tau):
            p = 1.0 / (1.0 + np.exp(-(gamma + tau * rate)))
            return p * norm.pdf(tau, prior.mean, prior.sd)

        z, _ = quad(integrand, 0.0, upper, limit=200)
        mean_num, _ = quad(lambda t: t * integrand(t), 0.0, upper, limit=200)
        oracle_mean = mean_num / z

        case = empty_case(covs, chars, {"Trait": True})
        post = pmi.pmi_posterior(
            case, np.array([[gamma, rate]]), structure, prior, pmi.GridConfig(2001)
        )
        assert post.mean_tau() == pytest.approx(oracle_mean, rel=1e-6)

    def test_absent_late_marker_shifts_posterior_down(self, one_char_structure):
        structure, covs, chars = one_char_structure
        prior = pmi.PmiPrior()
        case = empty_case(covs, chars, {"Trait": False})
        post = pmi.pmi_posterior(case, np.array([[-2.0, 1.0]]), structure, prior)
        ref = pmi.pmi_posterior(empty_case(covs, chars), np.array([[-2.0, 1.0]]), structure, prior)
        assert post.mean_tau() < ref.mean_tau()


class TestPosteriorObject:
    def _prior_post(self, structure, covs, chars, grid=None):
        draws = np.zeros((3, structure.n_free))
        return pmi.pmi_posterior(
            empty_case(covs, chars), draws, structure, pmi.PmiPrior(), grid or pmi.GridConfig()
        )

    def test_density_normalized(self, one_char_structure):
        structure, covs, chars = one_char_structure
        post = self._prior_post(structure, covs, chars)
        assert post.normalization_error < 1e-8

    def test_quantile_function_nondecreasing(self, one_char_structure):
        structure, covs, chars = one_char_structure
        post = self._prior_post(structure, covs, chars)
        ps = np.linspace(0, 1, 101)
        qs = post.quantile(ps)
        assert np.all(np.diff(qs) >= 0)

    def test_zero_mass_interval_degenerates_to_median(self, one_char_structure):
        structure, covs, chars = one_char_structure
        post = self._prior_post(structure, covs, chars)
        lo, hi = post.interval(0.0)
        med = post.quantile(0.5)
        assert lo == pytest.approx(med)
        assert hi == pytest.approx(med)

    def test_nested_intervals(self, one_char_structure):
        structure, covs, chars = one_char_structure
        post = self._prior_post(structure, covs, chars)
        lo50, hi50 = post.interval(0.5)
        lo90, hi90 = post.interval(0.9)
        assert lo90 < lo50 < hi50 < hi90

    def test_symmetric_density_mean_equals_median(self):
        grid = np.linspace(0.0, 4.0, 501)
        density = np.exp(-0.5 * ((grid - 2.0) / 0.4) ** 2)
        post = pmi.PmiPosterior(grid, density)
        assert post.mean_tau() == pytest.approx(post.quantile(0.5), abs=1e-6)

    def test_grid_refinement_stability(self, one_char_structure):
        structure, covs, chars = one_char_structure
        case = empty_case(covs, chars, {"Trait": True})
        draws = np.random.default_rng(1).normal(size=(100, structure.n_free))
        coarse = pmi.pmi_posterior(case, draws, structure, grid=pmi.GridConfig(1001))
        fine = pmi.pmi_posterior(case, draws, structure, grid=pmi.GridConfig(2001))
        for p in (0.05, 0.25, 0.5, 0.75, 0.95):
            assert coarse.quantile(p) == pytest.approx(fine.quantile(p), rel=5e-3)

    def test_summarize_fields(self, one_char_structure):
        structure, covs, chars = one_char_structure
        post = self._prior_post(structure, covs, chars)
        summary = pmi.summarize(post, mass=0.9)
        assert summary.interval_days[0] < summary.median_days < summary.interval_days[1]
        assert summary.mean_days > 0


class TestGates:
    def test_failed_diagnostics_rejected(self, one_char_structure):
        structure, covs, chars = one_char_structure
        rng = np.random.default_rng(2)
        chains = rng.standard_normal((4, 50, structure.n_free))
        chains[0] += 5.0  # force rhat failure
        draws = chains.reshape(-1, structure.n_free)
        samples = PosteriorSamples(
            draws=draws,
            chain_ids=np.repeat(np.arange(4), 50),
            param_names=structure.param_names,
            num_chains=4,
            samples_per_chain=50,
            accept_rates=(1.0,) * 4,
            step_sizes=(0.1,) * 4,
        )
        from taphos.sampler import diagnostics

        samples.diagnostics = diagnostics(samples)
        assert not samples.diagnostics.passes
        with pytest.raises(pmi.PmiError):
            pmi.pmi_posterior(empty_case(covs, chars), samples, structure)

    def test_invalid_grid_rejected(self):
        with pytest.raises(ValueError):
            pmi.GridConfig(num_points=2).build(pmi.PmiPrior())

    def test_non_finite_draws_rejected(self, one_char_structure):
        structure, covs, chars = one_char_structure
        case = empty_case(covs, chars, {"Trait": True})
        draws = np.full((4, structure.n_free), np.nan)
        with pytest.raises(pmi.PmiError):
            pmi.pmi_posterior(case, draws, structure)


class TestMonotoneInformation:
    def test_average_entropy_never_grows_with_observations(self, default_schemas):
        covs, chars = default_schemas
        structure = make_structure(covs, chars, "empty")
        rng = np.random.default_rng(3)
        D = len(chars)
        draws = np.concatenate(
            [rng.normal(-2, 0.3, (60, D)), rng.normal(0.8, 0.2, (60, D))], axis=1
        )
        prior = pmi.PmiPrior()
        subset = chars.characteristics[:6]
        ent_small, ent_large = [], []
        for i in range(30):
            vec = draws[rng.integers(len(draws))]
            tau = max(rng.normal(prior.mean, prior.sd), 0.0)
            probs = mdl.sigmoid(vec[:D] + tau * vec[D:])
            obs = {c: bool(rng.random() < probs[chars.index_of(c)]) for c in subset}
            few = dict(list(obs.items())[:3])
            case_few = sch.encode_case(sch.CaseRecord("a", None, {}, few), covs, chars)
            case_all = sch.encode_case(sch.CaseRecord("b", None, {}, obs), covs, chars)
            ent_small.append(pmi.pmi_posterior(case_few, draws, structure, prior).entropy())
            ent_large.append(pmi.pmi_posterior(case_all, draws, structure, prior).entropy())
        assert np.mean(ent_large) <= np.mean(ent_small) + 1e-6
