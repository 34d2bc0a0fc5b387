import numpy as np
import pytest
from scipy.special import logsumexp

from taphos import eig
from taphos import model as mdl
from taphos import schema as sch
from taphos.sampler import SamplerConfig, sample_posterior

from conftest import make_structure

TOY = eig.ToyLinearModel(noise_sd=0.5, slope_prior_sd=1.0, intercept_prior_sd=1.0)


@pytest.fixture(scope="module")
def two_char_setup():
    covs, chars = sch.load_schema(
        "covariates:\n  - {name: Larva, levels: [Absent, Present], reference: Absent}\n"
        "characteristics: [Bloat, Marbling]\n"
    )
    structure = make_structure(covs, chars, "full")
    rng = np.random.default_rng(0)
    mean = np.array([-2.0, -1.5, 0.8, 0.5, 0.6, -0.2])
    A = rng.normal(0, 0.08, (6, 6))
    cov = A @ A.T + np.diag([0.04] * 6)
    draws = rng.multivariate_normal(mean, cov, 4000)
    return structure, draws


class TestToyExact:
    def test_slope_zero_at_origin(self):
        assert eig.toy_exact_eig(0.0, target="slope") == 0.0

    def test_intercept_at_origin(self):
        assert eig.toy_exact_eig(0.0, 0.5, 1.0, 1.0, "intercept") == pytest.approx(
            0.5 * np.log(5.0), abs=1e-12
        )
        assert 0.5 * np.log(5.0) == pytest.approx(0.80472, abs=1e-5)

    def test_intercept_vanishes_at_large_x(self):
        assert eig.toy_exact_eig(1e6, 0.5, 1.0, 1.0, "intercept") == pytest.approx(0.0, abs=1e-9)

    def test_monotone_in_x_squared(self):
        xs = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
        slope = [eig.toy_exact_eig(x, target="slope") for x in xs]
        intercept = [eig.toy_exact_eig(x, target="intercept") for x in xs]
        assert np.all(np.diff(slope) > 0)
        assert np.all(np.diff(intercept) < 0)

    def test_nonnegative(self):
        for x in np.linspace(0, 10, 21):
            assert eig.toy_exact_eig(x, target="slope") >= 0.0
            assert eig.toy_exact_eig(x, target="intercept") >= 0.0


class TestTargetSelection:
    def test_partition(self, two_char_setup):
        structure, _ = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        assert len(target.indices) == 1
        assert set(target.indices) | set(target.phi_indices) == set(range(structure.n_free))
        assert not set(target.indices) & set(target.phi_indices)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            eig.TargetSelection((), 4)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            eig.TargetSelection((5,), 4)


class TestFitMvn:
    def test_known_normal_recovered(self):
        rng = np.random.default_rng(1)
        mean = np.array([1.0, -2.0, 0.5])
        cov = np.array([[1.0, 0.3, 0.1], [0.3, 2.0, -0.4], [0.1, -0.4, 0.5]])
        L = 100_000
        draws = rng.multivariate_normal(mean, cov, L)
        mvn = eig.fit_mvn(draws, eig.TargetSelection((2,), 3))
        se = np.sqrt(np.diag(cov) / L)
        assert np.all(np.abs(mvn.mean - mean) < 3 * se)
        assert not mvn.degenerate
        np.testing.assert_allclose(mvn.cov, cov, atol=0.05)

    def test_identical_draws_flagged_degenerate(self):
        draws = np.ones((500, 3))
        mvn = eig.fit_mvn(draws, eig.TargetSelection((0,), 3))
        assert mvn.degenerate

    def test_cross_block_shrinks_with_draws(self):
        rng = np.random.default_rng(2)
        target = eig.TargetSelection((0,), 2)
        norms = []
        for L in (300, 30_000):
            draws = rng.standard_normal((L, 2))  # independent blocks
            mvn = eig.fit_mvn(draws, target)
            norms.append(abs(mvn.cov[0, 1]))
        assert norms[1] < norms[0]

    def test_too_few_draws_rejected(self):
        draws = np.random.default_rng(3).standard_normal((25, 3))
        with pytest.raises(eig.EigError):
            eig.fit_mvn(draws, eig.TargetSelection((0,), 3))


class TestConditionalSampling:
    def test_independent_blocks_give_marginal(self):
        cov = np.diag([1.0, 2.0])
        mvn = eig.MvnApproximation(np.array([3.0, -1.0]), cov, eig.TargetSelection((0,), 2))
        samples = eig.conditional_nuisance_sample(mvn, np.array([10.0]), 200_000, seed=4)
        assert samples.shape == (200_000, 1)
        assert samples.mean() == pytest.approx(-1.0, abs=3 * np.sqrt(2.0 / 200_000))
        assert samples.var(ddof=1) == pytest.approx(2.0, rel=0.02)

    def test_two_dim_schur_values(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        mvn = eig.MvnApproximation(np.zeros(2), cov, eig.TargetSelection((1,), 2))
        mu_p, gain, mu_t, chol = mvn.conditional()
        cond_mean = mu_p + gain @ (np.array([1.0]) - mu_t)
        assert cond_mean[0] == pytest.approx(0.5, rel=1e-6)
        assert (chol @ chol.T)[0, 0] == pytest.approx(0.75, rel=1e-6)

    def test_sample_moments_match_schur(self):
        cov = np.array([[1.0, 0.3, 0.1], [0.3, 2.0, -0.4], [0.1, -0.4, 0.5]])
        mean = np.array([1.0, -2.0, 0.5])
        target = eig.TargetSelection((2,), 3)
        mvn = eig.MvnApproximation(mean, cov, target)
        theta = np.array([1.2])
        n = 100_000
        samples = eig.conditional_nuisance_sample(mvn, theta, n, seed=5)
        sig_t = cov[2, 2]
        cross = cov[[0, 1], 2]
        exp_mean = mean[[0, 1]] + cross / sig_t * (theta[0] - mean[2])
        exp_cov = cov[np.ix_([0, 1], [0, 1])] - np.outer(cross, cross) / sig_t
        se_mean = np.sqrt(np.diag(exp_cov) / n)
        assert np.all(np.abs(samples.mean(axis=0) - exp_mean) < 3 * se_mean)
        emp_cov = np.cov(samples, rowvar=False)
        for i in range(2):
            for j in range(2):
                se_cov = np.sqrt(
                    (exp_cov[i, i] * exp_cov[j, j] + exp_cov[i, j] ** 2) / n
                )
                assert abs(emp_cov[i, j] - exp_cov[i, j]) < 4 * se_cov

    def test_deterministic_given_seed(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        mvn = eig.MvnApproximation(np.zeros(2), cov, eig.TargetSelection((1,), 2))
        a = eig.conditional_nuisance_sample(mvn, np.array([1.0]), 100, seed=6)
        b = eig.conditional_nuisance_sample(mvn, np.array([1.0]), 100, seed=6)
        np.testing.assert_array_equal(a, b)


class TestToyEstimation:
    def test_slope_zero_at_x_zero(self):
        draws = TOY.prior_draws(20_000, seed=10)
        est = eig.eig_naive(TOY.bind(0.0), draws, TOY.target_for("slope"), 4000, 2000, 2000, seed=1)
        assert abs(est.value) <= max(2 * est.mc_standard_error, 5e-3)

    def test_matches_closed_form_small_budget(self):
        draws = TOY.prior_draws(20_000, seed=11)
        est = eig.eig_naive(TOY.bind(2.0), draws, TOY.target_for("slope"), 4000, 2000, 2000, seed=2)
        assert est.value == pytest.approx(eig.toy_exact_eig(2.0, target="slope"), abs=0.06)

    def test_reproducible(self):
        draws = TOY.prior_draws(5_000, seed=12)
        a = eig.eig_naive(TOY.bind(1.0), draws, TOY.target_for("slope"), 500, 300, 300, seed=3)
        b = eig.eig_naive(TOY.bind(1.0), draws, TOY.target_for("slope"), 500, 300, 300, seed=3)
        assert a.value == b.value
        assert a.mc_standard_error == b.mc_standard_error

    def test_estimator_mean_nonnegative_over_runs(self):
        draws = TOY.prior_draws(10_000, seed=13)
        values, ses = [], []
        for s in range(10):
            est = eig.eig_naive(TOY.bind(1.0), draws, TOY.target_for("slope"), 800, 400, 400, seed=s)
            values.append(est.value)
            ses.append(est.mc_standard_error)
        combined_se = np.sqrt(np.mean(np.square(ses)) / len(values))
        assert np.mean(values) >= -2 * combined_se

    def test_budget_validation(self):
        draws = TOY.prior_draws(1000, seed=14)
        with pytest.raises(ValueError):
            eig.eig_naive(TOY.bind(1.0), draws, TOY.target_for("slope"), 1, 100, 100, seed=0)

    def test_nested_bias_shrinks_with_inner_samples(self):
        # the log-of-average marginal term biases the x=0 intercept
        # estimate upward at small M'; growing M' must shrink the bias.
        # Fresh prior pools per replicate keep pool-level noise from
        # masking the effect, and pairing the two budgets on the same pool
        # cancels it in the difference.
        exact = eig.toy_exact_eig(0.0, 0.5, 1.0, 1.0, "intercept")
        target = TOY.target_for("intercept")
        bound = TOY.bind(0.0)
        small, large = [], []
        for rep in range(8):
            draws = TOY.prior_draws(30_000, seed=900 + rep)
            small.append(eig.eig_naive(bound, draws, target, 3000, 100, 100, seed=rep).value)
            large.append(eig.eig_naive(bound, draws, target, 3000, 4000, 4000, seed=rep).value)
        paired_gap = np.mean(np.asarray(small) - np.asarray(large))
        assert paired_gap > 0  # the small-budget upward bias dominates
        assert abs(np.mean(large) - exact) < abs(np.mean(small) - exact)


class TestLogSumExpForm:
    def test_shift_invariance_of_terms(self):
        rng = np.random.default_rng(7)
        l1 = rng.normal(-40, 3, 500)
        l2 = rng.normal(-40, 3, 700)
        base = (logsumexp(l1) - np.log(l1.size)) - (logsumexp(l2) - np.log(l2.size))
        c = 123.456
        shifted = (logsumexp(l1 + c) - np.log(l1.size)) - (logsumexp(l2 + c) - np.log(l2.size))
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_extreme_logits_finite(self, two_char_setup):
        structure, draws = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        design = eig.DesignSpec(8, 50.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",))
        shifted = draws.copy()
        shifted[:, 0] += 30.0  # extreme baseline logits
        est = eig.eig_naive(
            eig.DecompositionDesignModel(structure, target, design),
            shifted, target, 400, 200, 200, seed=8,
        )
        assert np.isfinite(est.value)
        assert np.isfinite(est.mc_standard_error)


class TestDecompositionDesigns:
    def test_single_cadaver_outcome_space(self, two_char_setup):
        structure, draws = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        design = eig.DesignSpec(1, 10.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",))
        bound = eig.DecompositionDesignModel(structure, target, design)
        outcomes = bound.enumerate_outcomes()
        assert outcomes.tolist() == [[0], [1]]

    def test_estimators_agree_and_low_variance_wins(self, two_char_setup):
        structure, draws = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        design = eig.DesignSpec(1, 10.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",))
        bound = eig.DecompositionDesignModel(structure, target, design)
        naive, low = [], []
        for s in range(8):
            naive.append(eig.eig_naive(bound, draws, target, 800, 400, 400, seed=50 + s).value)
            low.append(eig.eig_low_variance(bound, draws, target, 800, 400, 400, seed=50 + s).value)
        se = np.sqrt(np.var(naive, ddof=1) / 8 + np.var(low, ddof=1) / 8)
        assert abs(np.mean(naive) - np.mean(low)) < 3 * se
        assert np.std(low, ddof=1) < np.std(naive, ddof=1)

    def test_certain_outcome_carries_no_information(self, two_char_setup):
        structure, _ = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        design = eig.DesignSpec(1, 10.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",))
        bound = eig.DecompositionDesignModel(structure, target, design)
        rng = np.random.default_rng(9)
        sure = rng.normal(0, 0.05, (3000, 6))
        sure[:, 0] = 40.0 + rng.normal(0, 0.01, 3000)  # outcome probability pinned at one
        est = eig.eig_low_variance(bound, sure, target, 500, 250, 250, seed=9)
        assert est.value == pytest.approx(0.0, abs=1e-6)

    def test_unlinked_target_gains_nothing(self, two_char_setup):
        structure, _ = two_char_setup
        rng = np.random.default_rng(10)
        independent = rng.standard_normal((4000, 6)) * 0.3 + np.array([-2, -2, 0.5, 0.5, 0.3, 0.3])
        target = eig.TargetSelection.by_names(structure, ["effect[Marbling|Larva=Present]"])
        design = eig.DesignSpec(
            4, 10.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",)
        )
        bound = eig.DecompositionDesignModel(structure, target, design)
        est = eig.eig_naive(bound, independent, target, 2000, 800, 800, seed=11)
        assert abs(est.value) <= max(3 * est.mc_standard_error, 2e-3)

    def test_mask_disallowed_pair_excluded_from_tracking(self, default_schemas):
        covs, chars = default_schemas
        structure = make_structure(covs, chars, "strict")
        target = eig.TargetSelection.by_names(structure, ["effect[Desiccation|Larva=Present]"])
        tracked = eig.default_tracked_characteristics(structure, target)
        assert set(tracked) == {
            "Desiccation", "Exposed bone with moist tissue",
            "Exposed bone with desiccated tissue", "Bloat", "Bone with grease",
            "Adipocere", "Abdominal caving", "Weathered bone",
        }

    def test_enumeration_cap(self, two_char_setup):
        structure, draws = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        design = eig.DesignSpec(5000, 10.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",))
        bound = eig.DecompositionDesignModel(structure, target, design)
        assert bound.enumerate_outcomes() is None
        with pytest.raises(eig.EigError):
            eig.eig_low_variance(bound, draws, target, 100, 50, 50, seed=0)

    def test_group_collapsing(self, two_char_setup):
        structure, _ = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        per_cadaver = tuple(
            {"Larva": "Present"} if i % 2 == 0 else {"Larva": "Absent"} for i in range(6)
        )
        design = eig.DesignSpec(
            6, 5.0, per_cadaver_levels=per_cadaver, tracked_characteristics=("Bloat",)
        )
        bound = eig.DecompositionDesignModel(structure, target, design)
        assert sorted(bound.group_sizes.tolist()) == [3, 3]


class TestDesignScan:
    def test_scan_rows_and_argmax(self, two_char_setup):
        structure, draws = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        designs = [
            eig.DesignSpec(4, day, {"Larva": "Present"}, tracked_characteristics=("Bloat",))
            for day in (0.0, 5.0, 30.0)
        ]
        result = eig.design_scan(structure, draws, target, designs, n_outer=600,
                                 m_conditional=300, m_marginal=300, seed=12)
        assert len(result.rows) == 3
        assert result.rows[0].eig == pytest.approx(0.0, abs=5e-3)
        assert result.best_index == int(np.argmax([r.eig_per_cadaver for r in result.rows]))
        assert result.best_index > 0

    def test_scan_reproducible(self, two_char_setup):
        structure, draws = two_char_setup
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        designs = [eig.DesignSpec(2, 10.0, {"Larva": "Present"}, tracked_characteristics=("Bloat",))]
        r1 = eig.design_scan(structure, draws, target, designs, n_outer=300,
                             m_conditional=200, m_marginal=200, seed=13)
        r2 = eig.design_scan(structure, draws, target, designs, n_outer=300,
                             m_conditional=200, m_marginal=200, seed=13)
        assert r1.rows[0].eig == r2.rows[0].eig


class TestBeforeAfter:
    @pytest.fixture(scope="class")
    def fitted(self):
        covs, chars = sch.load_schema(
            "covariates:\n  - {name: Larva, levels: [Absent, Present], reference: Absent}\n"
            "characteristics: [Bloat]\n"
        )
        structure = make_structure(covs, chars, "full")
        rng = np.random.default_rng(20)
        truth = np.array([-1.5, 0.6, 0.9])
        cases = []
        for i in range(150):
            tau = max(rng.normal(2.0, 1.0), 0.0)
            larva = rng.random() < 0.5
            logit = truth[0] + tau * (truth[1] + truth[2] * larva)
            cases.append(
                sch.CaseRecord(
                    f"b{i}", float(np.expm1(tau)),
                    {"Larva": "Present" if larva else "Absent"},
                    {"Bloat": bool(rng.random() < mdl.sigmoid(logit))},
                )
            )
        enc = [sch.encode_case(c, covs, chars) for c in cases]
        data = mdl.encode_dataset(structure, enc)
        config = SamplerConfig(num_chains=2, warmup_iterations=250, samples_per_chain=250, seed=2)
        samples = sample_posterior(structure, data, config)
        return structure, data, samples, config

    def test_zero_cadaver_identity(self, fitted):
        structure, data, samples, config = fitted
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        result = eig.before_after_posterior(
            structure, data, samples, target, eig.DesignSpec(0, 20.0), config
        )
        np.testing.assert_array_equal(result.before_density, result.after_density)
        assert result.variance_ratio == (1.0,)

    def test_informative_design_shrinks_variance(self, fitted):
        structure, data, samples, config = fitted
        target = eig.TargetSelection.by_names(structure, ["effect[Bloat|Larva=Present]"])
        design = eig.DesignSpec(60, 25.0, {"Larva": "Present"})
        result = eig.before_after_posterior(structure, data, samples, target, design, config)
        assert result.variance_ratio[0] < 1.0
        assert result.refit_passed
