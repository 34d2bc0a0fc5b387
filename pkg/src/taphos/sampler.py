"""Markov chain Monte Carlo over the packed coefficient vector.

The default kernel is Hamiltonian: leapfrog trajectories with a jittered
step count, dual-averaging step-size adaptation, and windowed estimation of
a (diagonal or dense) mass matrix during warmup. An adaptive random-walk
Metropolis kernel is available for gradient-free debugging. Chains use
independently derived generators from one root seed, so a given
(config, dataset) pair reproduces bit-identical draws at any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import EncodedDataset, ModelStructure, log_posterior_and_grad


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    num_chains: int = 4
    warmup_iterations: int = 1000
    samples_per_chain: int = 1000
    seed: int = 0
    algorithm: str = "hmc"  # "hmc" | "random_walk"
    target_accept: float = 0.8
    max_leapfrog_steps: int = 16
    init_jitter_sd: float = 0.1
    metric: str = "auto"  # "auto" | "diag" | "dense"; auto = dense below 200 params
    threads: int = 1

    def __post_init__(self):
        if self.num_chains < 2:
            raise ValueError("need >= 2 chains for split-convergence diagnostics")
        if min(self.warmup_iterations, self.samples_per_chain) <= 0:
            raise ValueError("iteration counts must be positive")
        if self.algorithm not in ("hmc", "random_walk"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.metric not in ("auto", "diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class DiagnosticsReport:
    param_names: tuple[str, ...]
    rhat: np.ndarray
    ess: np.ndarray
    degenerate: np.ndarray
    max_rhat: float
    min_ess: float
    passes: bool

    RHAT_LIMIT = 1.05
    ESS_FLOOR = 100.0

    def to_dict(self) -> dict:
        return {
            "max_rhat": self.max_rhat,
            "min_ess": self.min_ess,
            "passes": self.passes,
            "per_parameter": [
                {
                    "name": n,
                    "rhat": None if np.isnan(r) else float(r),
                    "ess": None if np.isnan(e) else float(e),
                    "degenerate": bool(dg),
                }
                for n, r, e, dg in zip(self.param_names, self.rhat, self.ess, self.degenerate)
            ],
        }


@dataclass
class PosteriorSamples:
    draws: np.ndarray          # (num_chains * samples_per_chain, n_free)
    chain_ids: np.ndarray      # (draw,) chain index of each row
    param_names: tuple[str, ...]
    num_chains: int
    samples_per_chain: int
    accept_rates: tuple[float, ...]
    step_sizes: tuple[float, ...]
    divergences: int = 0
    diagnostics: DiagnosticsReport | None = None

    def __post_init__(self):
        expected = self.num_chains * self.samples_per_chain
        if self.draws.shape[0] != expected:
            raise ValueError("draw count must equal num_chains * samples_per_chain")

    def by_chain(self) -> np.ndarray:
        """Draws reshaped to (num_chains, samples_per_chain, n_free)."""
        out = np.empty((self.num_chains, self.samples_per_chain, self.draws.shape[1]))
        for c in range(self.num_chains):
            out[c] = self.draws[self.chain_ids == c]
        return out

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]


# -- convergence diagnostics --------------------------------------------------

def _split_chains(matrix: np.ndarray) -> np.ndarray:
    """(chains, T) -> (2*chains, T//2), dropping one draw from odd T."""
    chains, T = matrix.shape
    half = T // 2
    return np.concatenate([matrix[:, :half], matrix[:, T - half:]], axis=0)


def split_rhat(matrix: np.ndarray) -> float:
    """Potential scale reduction over split sequences of one parameter."""
    seqs = _split_chains(np.asarray(matrix, dtype=float))
    n = seqs.shape[1]
    if n < 2:
        return np.nan
    within = seqs.var(axis=1, ddof=1)
    W = within.mean()
    if W == 0.0:
        return np.nan
    B = n * seqs.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one sequence via FFT, all lags."""
    n = len(x)
    centered = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def effective_sample_size(matrix: np.ndarray) -> float:
    """Autocorrelation-time ESS over split sequences of one parameter."""
    seqs = _split_chains(np.asarray(matrix, dtype=float))
    m, n = seqs.shape
    if n < 4:
        return np.nan
    within = seqs.var(axis=1, ddof=1)
    W = within.mean()
    if W == 0.0:
        return np.nan
    B = n * seqs.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    acov = np.mean([_autocovariance(seqs[j]) for j in range(m)], axis=0)
    rho = 1.0 - (W - acov) / var_plus
    rho[0] = 1.0
    # Geyer initial monotone positive sequence over lag pairs
    max_pairs = (n - 1) // 2
    pair_sums = []
    for k in range(max_pairs):
        s = rho[2 * k] + rho[2 * k + 1]
        if s <= 0.0:
            break
        pair_sums.append(s)
    for k in range(1, len(pair_sums)):
        pair_sums[k] = min(pair_sums[k], pair_sums[k - 1])
    tau = -1.0 + 2.0 * float(np.sum(pair_sums)) if pair_sums else 1.0
    tau = max(tau, 1.0 / np.log10(max(m * n, 10)))
    return float(min(m * n / tau, m * n))


def diagnostics(samples: PosteriorSamples) -> DiagnosticsReport:
    """Split potential-scale-reduction and effective sample size for every
    parameter. A fit passes when max rhat < 1.05 and min ess > 100; zero
    within-variance parameters are flagged degenerate instead."""
    if samples.num_chains < 2:
        raise SamplerError("diagnostics require >= 2 chains")
    chains = samples.by_chain()
    P = chains.shape[2]
    rhat = np.full(P, np.nan)
    ess = np.full(P, np.nan)
    degenerate = np.zeros(P, dtype=bool)
    for p in range(P):
        matrix = chains[:, :, p]
        r = split_rhat(matrix)
        e = effective_sample_size(matrix)
        if np.isnan(r):
            degenerate[p] = True
        rhat[p] = r
        ess[p] = e
    valid = ~degenerate
    max_rhat = float(np.nanmax(rhat[valid])) if valid.any() else np.inf
    min_ess = float(np.nanmin(ess[valid])) if valid.any() else 0.0
    passes = (
        valid.all()
        and max_rhat < DiagnosticsReport.RHAT_LIMIT
        and min_ess > DiagnosticsReport.ESS_FLOOR
    )
    return DiagnosticsReport(
        samples.param_names, rhat, ess, degenerate, max_rhat, min_ess, bool(passes)
    )


# -- Hamiltonian kernel --------------------------------------------------------

class _Metric:
    """Mass-matrix helper parameterized by the estimated posterior covariance
    (diagonal vector or dense matrix)."""

    def __init__(self, dim: int, dense: bool):
        self.dense = dense
        if dense:
            self.cov = np.eye(dim)
            self._chol = np.eye(dim)
        else:
            self.var = np.ones(dim)

    def update(self, draws: np.ndarray):
        n = draws.shape[0]
        if n < 5:
            return
        shrink = n / (n + 5.0)
        if self.dense:
            cov = np.cov(draws, rowvar=False)
            cov = shrink * cov + (1.0 - shrink) * 1e-3 * np.eye(draws.shape[1])
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                cov += 1e-8 * np.trace(cov) / draws.shape[1] * np.eye(draws.shape[1])
                self._chol = np.linalg.cholesky(cov)
            self.cov = cov
        else:
            self.var = shrink * draws.var(axis=0, ddof=1) + (1.0 - shrink) * 1e-3
            self.var = np.maximum(self.var, 1e-10)

    def sample_momentum(self, rng: np.random.Generator) -> np.ndarray:
        if self.dense:
            z = rng.standard_normal(self._chol.shape[0])
            return np.linalg.solve(self._chol.T, z)
        return rng.standard_normal(self.var.shape[0]) / np.sqrt(self.var)

    def kinetic(self, p: np.ndarray) -> float:
        if self.dense:
            return 0.5 * float(p @ self.cov @ p)
        return 0.5 * float(np.sum(self.var * p * p))

    def velocity(self, p: np.ndarray) -> np.ndarray:
        if self.dense:
            return self.cov @ p
        return self.var * p


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, initial_step: float, target: float):
        self.target = target
        self.mu = np.log(10.0 * initial_step)
        self.log_step = np.log(initial_step)
        self.log_step_bar = 0.0
        self.h_bar = 0.0
        self.count = 0
        self.gamma, self.t0, self.kappa = 0.05, 10.0, 0.75

    def update(self, accept_prob: float) -> float:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob)
        self.log_step = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
        weight = self.count ** -self.kappa
        self.log_step_bar = weight * self.log_step + (1.0 - weight) * self.log_step_bar
        return float(np.exp(self.log_step))

    def adapted_step(self) -> float:
        return float(np.exp(self.log_step_bar))


def _find_initial_step(value_grad, q0, v0, g0, metric, rng) -> float:
    """Double or halve the step until one-step acceptance crosses 1/2."""
    step = 1.0
    p0 = metric.sample_momentum(rng)
    h0 = -v0 + metric.kinetic(p0)

    def one_step_energy(eps):
        p = p0 + 0.5 * eps * g0
        q = q0 + eps * metric.velocity(p)
        v, g = value_grad(q)
        p = p + 0.5 * eps * g
        return -v + metric.kinetic(p)

    h1 = one_step_energy(step)
    if not np.isfinite(h1):
        step, h1 = 1e-2, one_step_energy(1e-2)
    direction = 1 if (h0 - h1) > np.log(0.5) else -1
    for _ in range(100):
        step *= 2.0**direction
        h1 = one_step_energy(step)
        if not np.isfinite(h1):
            h1 = np.inf
        crossed = (h0 - h1) > np.log(0.5)
        if (direction == 1 and not crossed) or (direction == -1 and crossed):
            break
        if step < 1e-12 or step > 1e6:
            break
    return max(step, 1e-12)


def _warmup_windows(warmup: int) -> tuple[int, list[int], int]:
    """(initial step-size-only buffer, metric-update iteration marks, final buffer)."""
    if warmup < 40:
        return warmup, [], 0
    init_buf = max(int(0.15 * warmup), 10)
    term_buf = max(int(0.10 * warmup), 10)
    marks = []
    start, width = init_buf, max(int(0.0625 * warmup), 10)
    while start + width <= warmup - term_buf:
        marks.append(start + width)
        start += width
        width *= 2
    if marks:
        marks[-1] = warmup - term_buf
    else:
        marks = [warmup - term_buf]
    return init_buf, marks, term_buf


def _run_hmc_chain(value_grad, init, config: SamplerConfig, rng, dense_metric: bool):
    dim = init.shape[0]
    metric = _Metric(dim, dense_metric)
    q = init.copy()
    value, grad = value_grad(q)
    if not np.isfinite(value):
        raise SamplerError("non-finite log posterior at initialization")

    step = _find_initial_step(value_grad, q, value, grad, metric, rng)
    averager = _DualAveraging(step, config.target_accept)
    init_buf, marks, _ = _warmup_windows(config.warmup_iterations)
    marks = set(marks)
    window_draws: list[np.ndarray] = []

    total = config.warmup_iterations + config.samples_per_chain
    kept = np.empty((config.samples_per_chain, dim))
    accepts = 0
    divergences = 0

    for it in range(total):
        warming = it < config.warmup_iterations
        steps = int(rng.integers(1, config.max_leapfrog_steps + 1))
        p = metric.sample_momentum(rng)
        h0 = -value + metric.kinetic(p)

        q_new, v_new, g_new = q, value, grad
        p_new = p + 0.5 * step * g_new
        diverged = False
        for s in range(steps):
            q_new = q_new + step * metric.velocity(p_new)
            v_new, g_new = value_grad(q_new)
            if not np.isfinite(v_new):
                diverged = True
                break
            p_new = p_new + (step if s < steps - 1 else 0.5 * step) * g_new
        if diverged:
            accept_prob = 0.0
        else:
            h1 = -v_new + metric.kinetic(p_new)
            delta = h0 - h1
            if not np.isfinite(delta) or delta < -1000.0:
                diverged = True
                accept_prob = 0.0
            else:
                accept_prob = float(min(1.0, np.exp(min(delta, 0.0))))

        if not diverged and rng.random() < accept_prob:
            q, value, grad = q_new, v_new, g_new
            if not warming:
                accepts += 1
        divergences += int(diverged and not warming)

        if warming:
            step = averager.update(accept_prob)
            if it >= init_buf:
                window_draws.append(q.copy())
            if (it + 1) in marks and len(window_draws) >= 5:
                metric.update(np.asarray(window_draws))
                window_draws.clear()
                step = averager.adapted_step()
                averager = _DualAveraging(max(step, 1e-12), config.target_accept)
            if it + 1 == config.warmup_iterations:
                step = averager.adapted_step()
                if not np.isfinite(step) or step <= 1e-12:
                    raise SamplerError("step-size adaptation diverged")
        else:
            kept[it - config.warmup_iterations] = q

    return kept, accepts / config.samples_per_chain, step, divergences


# -- adaptive random-walk kernel ----------------------------------------------

def _run_rw_chain(value_grad, init, config: SamplerConfig, rng):
    dim = init.shape[0]
    q = init.copy()
    value, _ = value_grad(q)
    if not np.isfinite(value):
        raise SamplerError("non-finite log posterior at initialization")

    log_scale = np.log(2.38 / np.sqrt(dim))
    chol = np.eye(dim)
    history: list[np.ndarray] = []
    total = config.warmup_iterations + config.samples_per_chain
    kept = np.empty((config.samples_per_chain, dim))
    accepts = 0

    for it in range(total):
        warming = it < config.warmup_iterations
        scale = np.exp(log_scale)
        prop = q + scale * (chol @ rng.standard_normal(dim))
        v_prop, _ = value_grad(prop)
        accent = v_prop - value
        accept_prob = float(min(1.0, np.exp(min(accent, 0.0)))) if np.isfinite(v_prop) else 0.0
        if rng.random() < accept_prob:
            q, value = prop, v_prop
            if not warming:
                accepts += 1
        if warming:
            history.append(q.copy())
            log_scale += (it + 1) ** -0.7 * (accept_prob - 0.234)
            if (it + 1) % 100 == 0 and len(history) >= 2 * dim:
                cov = np.cov(np.asarray(history[len(history) // 2:]), rowvar=False)
                cov = np.atleast_2d(cov) + 1e-8 * np.eye(dim)
                try:
                    chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
        else:
            kept[it - config.warmup_iterations] = q

    return kept, accepts / config.samples_per_chain, float(np.exp(log_scale)), 0


# -- public entry ---------------------------------------------------------------

def sample_posterior(
    structure: ModelStructure,
    data: EncodedDataset | None,
    config: SamplerConfig,
) -> PosteriorSamples:
    """Draw posterior samples of the packed coefficient vector.

    An empty dataset is allowed and yields prior samples. Chains are merged
    in chain-index order; diagnostics are attached to the result.
    """
    value_grad = lambda vec: log_posterior_and_grad(structure, data, vec)  # noqa: E731
    dim = structure.n_free
    dense = config.metric == "dense" or (config.metric == "auto" and dim <= 200)

    seeds = np.random.SeedSequence(config.seed).spawn(config.num_chains)
    inits = []
    for c in range(config.num_chains):
        rng = np.random.default_rng(seeds[c])
        inits.append(
            (
                structure.prior_mean_vector() + config.init_jitter_sd * rng.standard_normal(dim),
                np.random.default_rng(seeds[c].spawn(1)[0]),
            )
        )

    def run(chain_index: int):
        init, rng = inits[chain_index]
        if config.algorithm == "hmc":
            return _run_hmc_chain(value_grad, init, config, rng, dense)
        return _run_rw_chain(value_grad, init, config, rng)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run, range(config.num_chains)))
    else:
        results = [run(c) for c in range(config.num_chains)]

    draws = np.concatenate([r[0] for r in results], axis=0)
    chain_ids = np.repeat(np.arange(config.num_chains), config.samples_per_chain)
    samples = PosteriorSamples(
        draws=draws,
        chain_ids=chain_ids,
        param_names=structure.param_names,
        num_chains=config.num_chains,
        samples_per_chain=config.samples_per_chain,
        accept_rates=tuple(r[1] for r in results),
        step_sizes=tuple(r[2] for r in results),
        divergences=sum(r[3] for r in results),
    )
    samples.diagnostics = diagnostics(samples)
    return samples
