"""Elapsed-time posteriors for new cases.

Works on the log scale ``tau = log(1 + t)``: a normal prior on tau (fitted
once to reference data, default Normal(2.33, 1.53)) is combined with the
decomposition likelihood of the case's observed characteristics, averaged
over coefficient draws. Each draw's posterior is normalized on the grid by
the trapezoid rule and the mixture of the per-draw posteriors is returned;
the grid starts at 0, which truncates the prior to nonnegative tau.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import grid_loglik
from .model import ModelStructure, level_design_row
from .sampler import PosteriorSamples
from .schema import EncodedCase


class PmiError(RuntimeError):
    pass


@dataclass(frozen=True)
class PmiPrior:
    """Normal prior on tau = log(1 + t)."""

    mean: float = 2.33
    sd: float = 1.53

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("prior sd must be positive")

    def log_density(self, tau: np.ndarray) -> np.ndarray:
        z = (np.asarray(tau, dtype=float) - self.mean) / self.sd
        return -0.5 * z**2 - np.log(self.sd) - 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GridConfig:
    num_points: int = 1001
    upper: float | None = None  # default: prior mean + 5 sd

    def build(self, prior: PmiPrior) -> np.ndarray:
        if self.num_points < 3:
            raise ValueError("grid needs at least 3 points")
        upper = self.upper if self.upper is not None else prior.mean + 5.0 * prior.sd
        if upper <= 0:
            raise ValueError("grid upper bound must be positive")
        return np.linspace(0.0, upper, self.num_points)


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * np.diff(grid)
    w[1:] += 0.5 * np.diff(grid)
    return w


@dataclass
class PmiPosterior:
    """Normalized density of tau on an ascending grid with cached CDF."""

    tau_grid: np.ndarray
    density: np.ndarray
    _weights: np.ndarray = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.tau_grid = np.asarray(self.tau_grid, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if self.tau_grid.shape != self.density.shape:
            raise ValueError("grid/density shape mismatch")
        if np.any(np.diff(self.tau_grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            raise PmiError("density must be finite and nonnegative")
        self._weights = _trapezoid_weights(self.tau_grid)
        total = float(self.density @ self._weights)
        if total <= 0 or not np.isfinite(total):
            raise PmiError("grid too coarse: density does not normalize")
        self.density = self.density / total
        segments = 0.5 * np.diff(self.tau_grid) * (self.density[:-1] + self.density[1:])
        cdf = np.concatenate([[0.0], np.cumsum(segments)])
        cdf /= cdf[-1]
        # break exact flats so inversion by interpolation stays well defined
        self._cdf = np.maximum.accumulate(cdf + np.arange(len(cdf)) * 1e-15)

    @property
    def normalization_error(self) -> float:
        return abs(float(self.density @ self._weights) - 1.0)

    def quantile(self, p: float | np.ndarray) -> float | np.ndarray:
        q = np.interp(np.asarray(p, dtype=float), self._cdf, self.tau_grid)
        return float(q) if np.isscalar(p) or np.ndim(p) == 0 else q

    def interval(self, mass: float = 0.9) -> tuple[float, float]:
        """Equal-tailed tau interval holding the requested mass; mass 0
        degenerates to the median."""
        if not 0.0 <= mass <= 1.0:
            raise ValueError("mass must be in [0, 1]")
        half = (1.0 - mass) / 2.0
        return (self.quantile(half), self.quantile(1.0 - half))

    def mean_tau(self) -> float:
        return float((self.tau_grid * self.density) @ self._weights)

    def mean_days(self) -> float:
        return float((np.expm1(self.tau_grid) * self.density) @ self._weights)

    def entropy(self) -> float:
        q = self.density
        term = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)
        return -float(term @ self._weights)

    def to_dict(self, quantile_levels=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        return {
            "tau_grid": self.tau_grid.tolist(),
            "density": self.density.tolist(),
            "quantiles_tau": {str(p): float(self.quantile(p)) for p in quantile_levels},
            "mean_tau": self.mean_tau(),
            "mean_days": self.mean_days(),
        }


@dataclass(frozen=True)
class PmiSummary:
    mean_days: float
    interval_days: tuple[float, float]
    mean_tau: float
    median_days: float
    mass: float


def _case_rates(structure: ModelStructure, draws: np.ndarray, case: EncodedCase) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw baseline logits and case-specific rates, (L, D) each."""
    D = structure.n_characteristics
    gamma = draws[:, :D]
    B = draws[:, D : 2 * D].copy()
    if structure.beta_coords:
        z = level_design_row(structure, case.level_index)
        active = np.nonzero(z)[0]
        if active.size:
            col_active = np.isin(structure._coord_cols, active)
            if col_active.any():
                sel = np.zeros((len(structure.beta_coords), D))
                sel[col_active, structure._coord_chars[col_active]] = 1.0
                B += draws[:, 2 * D :] @ sel
    return gamma, B


def _coeff_draws(samples: PosteriorSamples | np.ndarray, require_pass: bool) -> np.ndarray:
    if isinstance(samples, PosteriorSamples):
        if require_pass and samples.diagnostics is not None and not samples.diagnostics.passes:
            raise PmiError("posterior samples failed convergence diagnostics")
        return samples.draws
    return np.asarray(samples, dtype=float)


def pmi_posterior(
    case: EncodedCase,
    samples: PosteriorSamples | np.ndarray,
    structure: ModelStructure,
    prior: PmiPrior = PmiPrior(),
    grid: GridConfig = GridConfig(),
    require_pass: bool = True,
) -> PmiPosterior:
    """Posterior of tau for one case: the average over coefficient draws of
    each draw's grid-normalized posterior. A case with no observed
    characteristics reproduces the (grid-truncated) prior exactly."""
    draws = _coeff_draws(samples, require_pass)
    tau_grid = grid.build(prior)
    log_prior = prior.log_density(tau_grid)

    obs_idx = np.nonzero(case.observed)[0]
    if obs_idx.size == 0:
        unnorm = np.exp(log_prior - log_prior.max())
        return PmiPosterior(tau_grid, unnorm)

    gamma, B = _case_rates(structure, draws, case)
    loglik = grid_loglik(gamma, B, tau_grid, obs_idx, case.values[obs_idx])
    if not np.all(np.isfinite(loglik)):
        raise PmiError("non-finite likelihood on the grid")

    log_rows = loglik + log_prior[None, :]
    log_rows -= log_rows.max(axis=1, keepdims=True)
    rows = np.exp(log_rows)
    weights = _trapezoid_weights(tau_grid)
    norms = rows @ weights  # per-draw evidence under the same grid rule
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise PmiError("grid too coarse: a per-draw posterior does not normalize")
    density = (rows / norms[:, None]).mean(axis=0)
    return PmiPosterior(tau_grid, density)


def summarize(posterior: PmiPosterior, mass: float = 0.9) -> PmiSummary:
    """Point prediction (posterior mean of t) and an equal-tailed interval
    of the requested mass, reported in days."""
    lo, hi = posterior.interval(mass)
    return PmiSummary(
        mean_days=posterior.mean_days(),
        interval_days=(float(np.expm1(lo)), float(np.expm1(hi))),
        mean_tau=posterior.mean_tau(),
        median_days=float(np.expm1(posterior.quantile(0.5))),
        mass=mass,
    )
