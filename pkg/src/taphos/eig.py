"""Expected information gain of candidate experiments.

EIG of a design is estimated with a nested Monte-Carlo scheme: outer draws
of (outcome, target coordinates) from the fitted model, inner draws that
marginalize the nuisance coordinates, all combined in log space via the
log-sum-exp identity. Nuisance draws conditional on a target value come
from a multivariate-normal approximation of the posterior (sample mean and
covariance of the draws, conditioned by Schur complement). When a design's
outcome space is small enough to enumerate, a lower-variance estimator
replaces the sampled outer outcomes with an exact expectation over
outcomes.

The module also carries a conjugate linear-regression toy problem whose
EIG is known in closed form; it validates the estimators end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .model import ModelStructure, log_sigmoid, sigmoid
from .sampler import PosteriorSamples

ENUMERATION_CAP = 4096
SIGMA_REG = 1e-9  # trace-scaled ridge on the target block before inversion


class EigError(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetSelection:
    """Split of the free-parameter coordinates into targets (whose entropy
    reduction the design is scored on) and complementary nuisances."""

    indices: tuple[int, ...]
    n_params: int

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValueError("target selection must be nonempty")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("duplicate target indices")
        if min(self.indices) < 0 or max(self.indices) >= self.n_params:
            raise ValueError("target index out of range")

    @classmethod
    def by_names(cls, structure: ModelStructure, names: list[str]) -> "TargetSelection":
        return cls(tuple(structure.param_index(n) for n in names), structure.n_free)

    @property
    def phi_indices(self) -> tuple[int, ...]:
        theta = set(self.indices)
        return tuple(i for i in range(self.n_params) if i not in theta)


@dataclass(frozen=True)
class MvnApproximation:
    """Moment-matched normal approximation of the joint draws, partitioned
    into target and nuisance blocks."""

    mean: np.ndarray
    cov: np.ndarray
    target: TargetSelection
    degenerate: bool = False

    @property
    def theta_idx(self) -> np.ndarray:
        return np.asarray(self.target.indices, dtype=int)

    @property
    def phi_idx(self) -> np.ndarray:
        return np.asarray(self.target.phi_indices, dtype=int)

    def _theta_solver(self) -> np.ndarray:
        t = self.theta_idx
        sigma_t = self.cov[np.ix_(t, t)]
        dim = sigma_t.shape[0]
        ridge = SIGMA_REG * max(np.trace(sigma_t) / dim, 1e-30)
        return np.linalg.inv(sigma_t + ridge * np.eye(dim))

    def conditional(self, phi_subset: np.ndarray | None = None):
        """Mean offset map and covariance Cholesky of (a subset of) the
        nuisance block given the full target block."""
        t = self.theta_idx
        p = self.phi_idx if phi_subset is None else np.asarray(phi_subset, dtype=int)
        inv_t = self._theta_solver()
        cross = self.cov[np.ix_(p, t)]
        gain = cross @ inv_t
        cond_cov = self.cov[np.ix_(p, p)] - gain @ cross.T
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        dim = cond_cov.shape[0]
        jitter = 0.0
        scale = max(np.trace(cond_cov) / max(dim, 1), 1e-30)
        for _ in range(6):
            try:
                chol = np.linalg.cholesky(cond_cov + jitter * np.eye(dim))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-12 * scale)
        else:
            raise EigError("conditional nuisance covariance is not positive semidefinite")
        return self.mean[p], gain, self.mean[t], chol


def _draws_matrix(samples: PosteriorSamples | np.ndarray, require_pass: bool = True) -> np.ndarray:
    if isinstance(samples, PosteriorSamples):
        if require_pass and samples.diagnostics is not None and not samples.diagnostics.passes:
            raise EigError("posterior samples failed convergence diagnostics")
        return samples.draws
    return np.asarray(samples, dtype=float)


def fit_mvn(samples: PosteriorSamples | np.ndarray, target: TargetSelection) -> MvnApproximation:
    """Unbiased sample mean and covariance over the draws, block-partitioned
    per the target selection. Requires at least 10 draws per parameter."""
    draws = _draws_matrix(samples)
    L, P = draws.shape
    if P != target.n_params:
        raise ValueError("target selection does not match draw dimension")
    if L < 10 * P:
        raise EigError(f"need at least {10 * P} draws to moment-match {P} parameters, got {L}")
    mean = draws.mean(axis=0)
    centered = draws - mean
    cov = centered.T @ centered / (L - 1)
    degenerate = bool(np.any(np.diag(cov) <= 0.0) or not np.all(np.isfinite(cov)))
    return MvnApproximation(mean, cov, target, degenerate)


def conditional_nuisance_sample(
    mvn: MvnApproximation,
    theta_value: np.ndarray,
    count: int,
    seed: int | np.random.SeedSequence,
) -> np.ndarray:
    """Draw nuisance vectors from the normal approximation conditioned on
    the given target value."""
    theta_value = np.atleast_1d(np.asarray(theta_value, dtype=float))
    mu_p, gain, mu_t, chol = mvn.conditional()
    mean = mu_p + gain @ (theta_value - mu_t)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, len(mu_p)))
    return mean[None, :] + z @ chol.T


@dataclass(frozen=True)
class EigEstimate:
    value: float
    mc_standard_error: float
    estimator: str
    n_outer: int
    m_conditional: int
    m_marginal: int

    def __post_init__(self):
        if self.mc_standard_error < 0:
            raise ValueError("standard error cannot be negative")


# -- experimental designs over the decomposition model -------------------------

@dataclass(frozen=True)
class DesignSpec:
    """A hypothetical experiment: how many cadavers, in which covariate
    state(s), observed once at a terminal day. ``num_cadavers`` may be zero
    to describe a no-op experiment (useful as a baseline)."""

    num_cadavers: int
    observation_day: float
    covariate_levels: dict[str, str] | None = None
    per_cadaver_levels: tuple[dict[str, str], ...] | None = None
    tracked_characteristics: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_cadavers < 0:
            raise ValueError("cadaver count cannot be negative")
        if self.observation_day < 0:
            raise ValueError("observation day cannot be negative")
        if self.per_cadaver_levels is not None and len(self.per_cadaver_levels) != self.num_cadavers:
            raise ValueError("per-cadaver assignment list length mismatch")

    def assignments(self) -> list[dict[str, str]]:
        if self.per_cadaver_levels is not None:
            return list(self.per_cadaver_levels)
        return [dict(self.covariate_levels or {})] * self.num_cadavers


def default_tracked_characteristics(
    structure: ModelStructure, target: TargetSelection
) -> tuple[str, ...]:
    """Characteristics whose outcome depends on a target coordinate: the
    characteristic a target names directly, plus every characteristic whose
    mask row admits a covariate carrying a targeted level effect."""
    D = structure.n_characteristics
    chars = set()
    target_covs = set()
    for idx in target.indices:
        if idx < D:
            chars.add(idx)
        elif idx < 2 * D:
            chars.add(idx - D)
        else:
            d, k = structure.beta_coords[idx - 2 * D]
            chars.add(d)
            target_covs.add(structure.level_columns[k][0])
    for c in target_covs:
        for d in range(D):
            if structure.mask.allowed[d, c]:
                chars.add(d)
    names = structure.characteristics.characteristics
    return tuple(names[d] for d in sorted(chars))


class DecompositionDesignModel:
    """Outcome model of one design under the fitted decomposition model.

    Cadavers sharing an assignment form a group; the sufficient outcome is
    the per-(group, characteristic) count of cadavers showing the
    characteristic at the observation day. Only coefficients that reach the
    tracked logits are active; likelihood evaluations run in that reduced
    coordinate space.
    """

    def __init__(self, structure: ModelStructure, target: TargetSelection, design: DesignSpec):
        self.structure = structure
        self.design = design
        tracked = design.tracked_characteristics
        if tracked is None:
            tracked = default_tracked_characteristics(structure, target)
        if not tracked:
            raise EigError("design tracks no characteristics")
        self.tracked = tuple(tracked)
        self.char_idx = np.array(
            [structure.characteristics.index_of(name) for name in self.tracked], dtype=int
        )
        self.tau = float(np.log1p(design.observation_day))

        groups: dict[tuple[int, ...], int] = {}
        for levels in design.assignments():
            key = []
            for cov in structure.covariates.covariates:
                raw = levels.get(cov.name)
                key.append(cov.level_index(raw) if raw is not None else cov.reference_level_index)
            key = tuple(key)
            groups[key] = groups.get(key, 0) + 1
        self.group_levels = list(groups)
        self.group_sizes = np.array(list(groups.values()), dtype=int)

        D = structure.n_characteristics
        cells = [(g, d) for g in range(len(self.group_levels)) for d in self.char_idx]
        self.cells = cells
        active: list[int] = []
        rows: list[np.ndarray] = []
        col_of: dict[int, int] = {}

        def col(param_idx: int) -> int:
            if param_idx not in col_of:
                col_of[param_idx] = len(active)
                active.append(param_idx)
            return col_of[param_idx]

        coord_lookup = {
            (d, k): 2 * D + i for i, (d, k) in enumerate(structure.beta_coords)
        }
        for g, d in cells:
            row_entries: list[tuple[int, float]] = [(col(d), 1.0), (col(D + d), self.tau)]
            levels = self.group_levels[g]
            for k, (c, lvl) in enumerate(structure.level_columns):
                if levels[c] == lvl and (d, k) in coord_lookup:
                    row_entries.append((col(coord_lookup[(d, k)]), self.tau))
            rows.append(row_entries)
        self.active = np.array(active, dtype=int)
        A = np.zeros((len(cells), len(active)))
        for r, entries in enumerate(rows):
            for c_idx, coef in entries:
                A[r, c_idx] += coef
        self.A = A
        self.cell_sizes = np.repeat(self.group_sizes, len(self.char_idx))

    # estimator interface ------------------------------------------------

    def active_indices(self) -> np.ndarray:
        return self.active

    def _cell_logits(self, params_active: np.ndarray) -> np.ndarray:
        return params_active @ self.A.T

    def simulate(self, params_active: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.design.num_cadavers == 0:
            return np.zeros((params_active.shape[0], 0), dtype=np.int64)
        probs = sigmoid(self._cell_logits(params_active))
        return rng.binomial(self.cell_sizes[None, :], probs)

    def log_likelihood_matrix(self, outcomes: np.ndarray, params_active: np.ndarray) -> np.ndarray:
        """(outcome, parameter-row) log-likelihood table, combinatorial
        constants omitted (they cancel in every estimator ratio)."""
        if self.design.num_cadavers == 0:
            return np.zeros((outcomes.shape[0], params_active.shape[0]))
        logits = self._cell_logits(params_active)
        ls_pos = log_sigmoid(logits)
        ls_neg = ls_pos - logits  # log sigma(-z) = log sigma(z) - z
        counts = np.asarray(outcomes, dtype=float)
        return counts @ ls_pos.T + (self.cell_sizes[None, :] - counts) @ ls_neg.T

    def paired_log_likelihood(self, outcomes: np.ndarray, params_active: np.ndarray) -> np.ndarray:
        """Row-paired variant: outcomes (B, cells) against params (B, M, act)
        giving (B, M)."""
        if self.design.num_cadavers == 0:
            return np.zeros(params_active.shape[:2])
        logits = params_active @ self.A.T  # (B, M, cells)
        ls_pos = log_sigmoid(logits)
        ls_neg = ls_pos - logits
        counts = np.asarray(outcomes, dtype=float)[:, None, :]
        return (counts * ls_pos + (self.cell_sizes[None, None, :] - counts) * ls_neg).sum(axis=2)

    def outcome_log_pmf(self, outcomes: np.ndarray, params_active: np.ndarray) -> np.ndarray:
        """Exact outcome log-probabilities (binomial coefficients included)."""
        base = self.log_likelihood_matrix(outcomes, params_active)
        n = self.cell_sizes[None, :]
        k = np.asarray(outcomes, dtype=float)
        log_comb = (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)).sum(axis=1)
        return base + log_comb[:, None]

    def enumerate_outcomes(self) -> np.ndarray | None:
        if self.design.num_cadavers == 0:
            return np.zeros((1, 0), dtype=np.int64)
        sizes = self.cell_sizes + 1
        total = int(np.prod(sizes.astype(object)))
        if total > ENUMERATION_CAP:
            return None
        grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


# -- toy conjugate regression ----------------------------------------------------

@dataclass(frozen=True)
class ToyLinearModel:
    """One-covariate regression with normal priors on slope and intercept;
    parameter order is (slope, intercept), the design is the covariate value."""

    noise_sd: float = 0.5
    slope_prior_sd: float = 1.0
    intercept_prior_sd: float = 1.0

    def __post_init__(self):
        if min(self.noise_sd, self.slope_prior_sd, self.intercept_prior_sd) <= 0:
            raise ValueError("all scales must be positive")

    def prior_draws(self, count: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return np.column_stack(
            [
                rng.normal(0.0, self.slope_prior_sd, count),
                rng.normal(0.0, self.intercept_prior_sd, count),
            ]
        )

    def bind(self, x: float) -> "_BoundToyModel":
        return _BoundToyModel(self, float(x))

    def target_for(self, which: str) -> TargetSelection:
        if which == "slope":
            return TargetSelection((0,), 2)
        if which == "intercept":
            return TargetSelection((1,), 2)
        raise ValueError("target must be 'slope' or 'intercept'")


class _BoundToyModel:
    def __init__(self, toy: ToyLinearModel, x: float):
        self.toy = toy
        self.x = x
        self._log_norm = -0.5 * np.log(2 * np.pi) - np.log(toy.noise_sd)

    def active_indices(self) -> np.ndarray:
        return np.arange(2)

    def simulate(self, params_active: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mean = params_active[:, 0] * self.x + params_active[:, 1]
        return (mean + rng.normal(0.0, self.toy.noise_sd, mean.shape))[:, None]

    def _logpdf(self, y, mean):
        z = (y - mean) / self.toy.noise_sd
        return self._log_norm - 0.5 * z * z

    def log_likelihood_matrix(self, outcomes: np.ndarray, params_active: np.ndarray) -> np.ndarray:
        mean = params_active[:, 0] * self.x + params_active[:, 1]
        return self._logpdf(np.asarray(outcomes)[:, 0][:, None], mean[None, :])

    def paired_log_likelihood(self, outcomes: np.ndarray, params_active: np.ndarray) -> np.ndarray:
        mean = params_active[..., 0] * self.x + params_active[..., 1]
        return self._logpdf(np.asarray(outcomes)[:, 0][:, None], mean)

    def enumerate_outcomes(self) -> None:
        return None

    def outcome_log_pmf(self, outcomes, params_active):  # pragma: no cover - continuous
        raise EigError("outcome space is continuous")


def toy_exact_eig(
    x: float,
    noise_sd: float = 0.5,
    slope_prior_sd: float = 1.0,
    intercept_prior_sd: float = 1.0,
    target: str = "slope",
) -> float:
    """Closed-form EIG of one observation at covariate value x."""
    sx2 = (slope_prior_sd * x) ** 2
    if target == "slope":
        return 0.5 * np.log1p(sx2 / (noise_sd**2 + intercept_prior_sd**2))
    if target == "intercept":
        return 0.5 * np.log1p(intercept_prior_sd**2 / (noise_sd**2 + sx2))
    raise ValueError("target must be 'slope' or 'intercept'")


# -- nested Monte-Carlo estimators -----------------------------------------------

_CHUNK = 256


def _resample_rows(draws: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    L = draws.shape[0]
    if count <= L:
        return draws[rng.permutation(L)[:count]]
    return draws[rng.integers(0, L, count)]


def _prepare(model, draws, target, n_outer, m_conditional, m_marginal, seed):
    if min(n_outer, m_conditional, m_marginal) < 2:
        raise ValueError("all sample counts must be at least 2")
    mvn = fit_mvn(draws, target)
    if mvn.degenerate:
        raise EigError("degenerate draw covariance; cannot build the normal approximation")
    a_idx = model.active_indices()
    theta_idx = np.asarray(target.indices, dtype=int)
    theta_pos = {p: i for i, p in enumerate(theta_idx)}
    act_is_theta = np.isin(a_idx, theta_idx)
    act_theta_cols = np.array([theta_pos[p] for p in a_idx[act_is_theta]], dtype=int)
    act_phi = a_idx[~act_is_theta]
    mu_p, gain, mu_t, chol = mvn.conditional(act_phi)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    outer_ss, inner_ss, sim_ss, cond_ss = root.spawn(4)
    outer_rows = _resample_rows(draws, n_outer, np.random.default_rng(outer_ss))
    inner_rows = _resample_rows(draws, m_marginal, np.random.default_rng(inner_ss))
    return {
        "a_idx": a_idx,
        "act_is_theta": act_is_theta,
        "act_theta_cols": act_theta_cols,
        "n_act_phi": len(act_phi),
        "cond": (mu_p, gain, mu_t, chol),
        "theta_idx": theta_idx,
        "outer_rows": outer_rows,
        "inner_active": inner_rows[:, a_idx],
        "sim_ss": sim_ss,
        "cond_ss": cond_ss,
    }


def _conditional_active_params(prep, theta_chunk, m_conditional, chunk_start):
    """Assemble (B, M, n_active) parameter stacks: target columns pinned to
    the outer draw, nuisance columns sampled from the conditional normal.
    Each outer index owns a derived seed, so chunking and parallelism do
    not change the draws."""
    mu_p, gain, mu_t, chol = prep["cond"]
    B = theta_chunk.shape[0]
    M = m_conditional
    n_act = prep["a_idx"].size
    params = np.empty((B, M, n_act))
    params[:, :, prep["act_is_theta"]] = theta_chunk[:, prep["act_theta_cols"]][:, None, :]
    if prep["n_act_phi"]:
        means = (theta_chunk - mu_t[None, :]) @ gain.T + mu_p[None, :]
        cond_ss = prep["cond_ss"]
        for b in range(B):
            child = np.random.SeedSequence(
                entropy=cond_ss.entropy, spawn_key=cond_ss.spawn_key + (chunk_start + b,)
            )
            z = np.random.default_rng(child).standard_normal((M, prep["n_act_phi"]))
            params[b, :, ~prep["act_is_theta"]] = (means[b][None, :] + z @ chol.T).T
    return params


def _nested_estimate(model, draws, target, n_outer, m_conditional, m_marginal, seed,
                     enumerate_outcome_space: bool):
    prep = _prepare(model, draws, target, n_outer, m_conditional, m_marginal, seed)
    outer = prep["outer_rows"]
    inner_active = prep["inner_active"]
    log_m = np.log(m_conditional)
    log_mp = np.log(m_marginal)

    if enumerate_outcome_space:
        outcomes = model.enumerate_outcomes()
        if outcomes is None:
            raise EigError(
                f"outcome space not enumerable within {ENUMERATION_CAP}; use the naive estimator"
            )
        # marginal term is outcome-indexed and shared by every outer draw
        t2 = logsumexp(model.log_likelihood_matrix(outcomes, inner_active), axis=1) - log_mp
        per_n = np.empty(n_outer)
        for start in range(0, n_outer, _CHUNK):
            chunk = outer[start : start + _CHUNK]
            theta_chunk = chunk[:, prep["theta_idx"]]
            params = _conditional_active_params(prep, theta_chunk, m_conditional, start)
            B = chunk.shape[0]
            weights = np.exp(model.outcome_log_pmf(outcomes, chunk[:, prep["a_idx"]]))
            t1 = np.empty((outcomes.shape[0], B))
            for b in range(B):
                l1 = model.log_likelihood_matrix(outcomes, params[b])
                t1[:, b] = logsumexp(l1, axis=1) - log_m
            per_n[start : start + B] = np.sum(weights * (t1 - t2[:, None]), axis=0)
        estimator = "low_variance"
    else:
        sim_rng = np.random.default_rng(prep["sim_ss"])
        y_outer = model.simulate(outer[:, prep["a_idx"]], sim_rng)
        per_n = np.empty(n_outer)
        for start in range(0, n_outer, _CHUNK):
            sl = slice(start, min(start + _CHUNK, n_outer))
            chunk = outer[sl]
            y_chunk = y_outer[sl]
            theta_chunk = chunk[:, prep["theta_idx"]]
            params = _conditional_active_params(prep, theta_chunk, m_conditional, start)
            t1 = logsumexp(model.paired_log_likelihood(y_chunk, params), axis=1) - log_m
            l2 = model.log_likelihood_matrix(y_chunk, inner_active)
            t2 = logsumexp(l2, axis=1) - log_mp
            per_n[sl] = t1 - t2
        estimator = "naive"

    value = float(per_n.mean())
    se = float(per_n.std(ddof=1) / np.sqrt(n_outer))
    return EigEstimate(value, se, estimator, n_outer, m_conditional, m_marginal)


def eig_naive(
    model,
    samples: PosteriorSamples | np.ndarray,
    target: TargetSelection,
    n_outer: int = 10_000,
    m_conditional: int = 5_000,
    m_marginal: int = 5_000,
    seed: int = 0,
) -> EigEstimate:
    """Nested Monte-Carlo EIG with sampled outcomes (log-sum-exp form,
    including the sample-count normalization so absolute values are
    meaningful; the normalization is design-independent, so comparisons
    are unaffected)."""
    draws = _draws_matrix(samples)
    return _nested_estimate(
        model, draws, target, n_outer, m_conditional, m_marginal, seed, False
    )


def eig_low_variance(
    model,
    samples: PosteriorSamples | np.ndarray,
    target: TargetSelection,
    n_outer: int = 10_000,
    m_conditional: int = 5_000,
    m_marginal: int = 5_000,
    seed: int = 0,
) -> EigEstimate:
    """EIG with the outcome expectation computed by exact enumeration of a
    discrete outcome space, removing the outcome-sampling variance."""
    draws = _draws_matrix(samples)
    return _nested_estimate(
        model, draws, target, n_outer, m_conditional, m_marginal, seed, True
    )


# -- design ranking and knowledge preview ---------------------------------------

@dataclass(frozen=True)
class DesignScanRow:
    design: DesignSpec
    eig: float
    eig_per_cadaver: float
    mc_standard_error: float
    estimator: str


@dataclass(frozen=True)
class DesignScanResult:
    rows: tuple[DesignScanRow, ...]
    best_index: int

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "num_cadavers": r.design.num_cadavers,
                    "observation_day": r.design.observation_day,
                    "covariate_levels": r.design.covariate_levels or {},
                    "eig": r.eig,
                    "eig_per_cadaver": r.eig_per_cadaver,
                    "mc_standard_error": r.mc_standard_error,
                    "estimator": r.estimator,
                }
                for r in self.rows
            ],
            "best_index": self.best_index,
        }


def design_scan(
    structure: ModelStructure,
    samples: PosteriorSamples | np.ndarray,
    target: TargetSelection,
    designs: list[DesignSpec],
    estimator: str = "naive",
    n_outer: int = 2_000,
    m_conditional: int = 1_000,
    m_marginal: int = 1_000,
    seed: int = 0,
) -> DesignScanResult:
    """Estimate EIG per cadaver over a grid of designs; the best design
    maximizes EIG per cadaver."""
    draws = _draws_matrix(samples)
    rows = []
    for i, design in enumerate(designs):
        child_seed = np.random.SeedSequence([seed, i])
        bound = DecompositionDesignModel(structure, target, design)
        fn = eig_low_variance if estimator == "low_variance" else eig_naive
        est = fn(bound, draws, target, n_outer, m_conditional, m_marginal, child_seed)
        denom = max(design.num_cadavers, 1)
        rows.append(
            DesignScanRow(design, est.value, est.value / denom, est.mc_standard_error, est.estimator)
        )
    best = int(np.argmax([r.eig_per_cadaver for r in rows]))
    return DesignScanResult(tuple(rows), best)


@dataclass(frozen=True)
class BeforeAfter:
    target_names: tuple[str, ...]
    grid: np.ndarray
    before_density: np.ndarray  # (n_targets, grid)
    after_density: np.ndarray
    variance_ratio: tuple[float, ...]
    refit_passed: bool

    def to_dict(self) -> dict:
        return {
            "target_names": list(self.target_names),
            "grid": self.grid.tolist(),
            "before_density": self.before_density.tolist(),
            "after_density": self.after_density.tolist(),
            "variance_ratio": list(self.variance_ratio),
            "refit_passed": self.refit_passed,
        }


def _kde_density(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    from scipy.stats import gaussian_kde

    return gaussian_kde(values)(grid)


def before_after_posterior(
    structure: ModelStructure,
    data,
    samples: PosteriorSamples,
    target: TargetSelection,
    design: DesignSpec,
    refit_config,
) -> BeforeAfter:
    """Target marginals before and after the hypothetical experiment.

    The after-state refits on the dataset augmented with the design's
    expected outcomes at the posterior-mean coefficients, then recenters
    each target coordinate at its pre-experiment mean (the experiment is
    expected to sharpen, not move, the estimate).
    """
    from .model import char_probs, encode_dataset, level_design_row
    from .sampler import sample_posterior
    from .schema import CaseRecord, encode_case

    draws = _draws_matrix(samples)
    theta_idx = np.asarray(target.indices, dtype=int)
    names = tuple(structure.param_names[i] for i in theta_idx)
    before = draws[:, theta_idx]
    span = before.std(axis=0).max()
    lo = before.min() - 2 * span
    hi = before.max() + 2 * span
    grid = np.linspace(lo, hi, 401)
    before_density = np.stack([_kde_density(before[:, j], grid) for j in range(len(theta_idx))])

    if design.num_cadavers == 0:
        return BeforeAfter(
            names, grid, before_density, before_density.copy(),
            tuple(1.0 for _ in theta_idx), True,
        )

    mean_vec = draws.mean(axis=0)
    covs, chars = structure.covariates, structure.characteristics
    bound = DecompositionDesignModel(structure, target, design)
    extra = []
    for g, levels_key in enumerate(bound.group_levels):
        level_names = {
            cov.name: cov.levels[levels_key[c]] for c, cov in enumerate(covs.covariates)
        }
        case = CaseRecord(f"hypothetical-{g}", design.observation_day, level_names, {})
        enc = encode_case(case, covs, chars)
        probs = char_probs(
            structure, mean_vec, level_design_row(structure, enc.level_index)[None, :],
            np.array([bound.tau]),
        )[0]
        observed = np.ones(len(chars), dtype=bool)
        expected = type(enc)(enc.case_id, enc.level_index, design.observation_day, observed, probs)
        extra.extend([expected] * int(bound.group_sizes[g]))

    base_cases = list(data_cases(data, structure))
    augmented = encode_dataset(structure, base_cases + extra)
    refit = sample_posterior(structure, augmented, refit_config)
    after = refit.draws[:, theta_idx].copy()
    after += before.mean(axis=0) - after.mean(axis=0)
    after_density = np.stack([_kde_density(after[:, j], grid) for j in range(len(theta_idx))])
    ratio = tuple(
        float(after[:, j].var(ddof=1) / before[:, j].var(ddof=1)) for j in range(len(theta_idx))
    )
    passed = bool(refit.diagnostics.passes) if refit.diagnostics else False
    return BeforeAfter(names, grid, before_density, after_density, ratio, passed)


def data_cases(data, structure: ModelStructure):
    """Reconstruct per-case encoded views from a dataset's arrays."""
    from .schema import EncodedCase

    for i in range(len(data)):
        yield EncodedCase(
            data.case_ids[i],
            data.level_index[i],
            float(np.expm1(data.tau[i])),
            data.observed[i] > 0,
            data.values[i],
        )
