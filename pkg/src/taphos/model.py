"""Generative model for decomposition observations.

For characteristic ``d`` of a case with elapsed time ``t`` the log-odds of
observing the characteristic are ``baseline_logit_d + log(1+t) * B_d`` where
``B_d`` is the case-specific rate: the base rate coefficient of ``d`` plus
the level effects of every mask-allowed covariate at the case's levels.
Reference levels contribute exactly zero and are not free parameters.

Coefficients are packed into one flat vector in (baseline_logit block,
base_rate block, effect block) order; ``ModelStructure.param_names`` is the
published index map for samplers, persistence, and the MVN approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import loglik_and_resid
from .schema import (
    CovariateSchema,
    DecompositionSchema,
    EncodedCase,
    InteractionMask,
    SchemaError,
)

# priors: effects and base rates ~ Normal(0, 2), baseline logits ~ Normal(-2, 2)
PRIOR_SD = 2.0
GAMMA_PRIOR_MEAN = -2.0
_LOG_NORM_CONST = -0.5 * np.log(2.0 * np.pi) - np.log(PRIOR_SD)


def log_sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    """log(sigma(x)), stable for arbitrarily large |x|."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelStructure:
    """Schemas + mask with the derived free-parameter packing tables."""

    covariates: CovariateSchema
    characteristics: DecompositionSchema
    mask: InteractionMask

    # derived, filled in __post_init__
    level_columns: tuple[tuple[int, int], ...] = field(init=False, compare=False)
    beta_coords: tuple[tuple[int, int], ...] = field(init=False, compare=False)
    param_names: tuple[str, ...] = field(init=False, compare=False)
    _coord_chars: np.ndarray = field(init=False, compare=False, repr=False)
    _coord_cols: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        D, C = len(self.characteristics), len(self.covariates)
        if self.mask.allowed.shape != (D, C):
            raise SchemaError("mask shape does not match schemas")
        cols = []
        for c, cov in enumerate(self.covariates.covariates):
            for lvl in range(len(cov.levels)):
                if lvl != cov.reference_level_index:
                    cols.append((c, lvl))
        coords = []
        for d in range(D):
            for k, (c, _lvl) in enumerate(cols):
                if self.mask.allowed[d, c]:
                    coords.append((d, k))
        chars = self.characteristics.characteristics
        names = [f"baseline_logit[{ch}]" for ch in chars]
        names += [f"base_rate[{ch}]" for ch in chars]
        for d, k in coords:
            c, lvl = cols[k]
            cov = self.covariates.covariates[c]
            names.append(f"effect[{chars[d]}|{cov.name}={cov.levels[lvl]}]")
        object.__setattr__(self, "level_columns", tuple(cols))
        object.__setattr__(self, "beta_coords", tuple(coords))
        object.__setattr__(self, "param_names", tuple(names))
        coord_arr = np.array(coords, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "_coord_chars", coord_arr[:, 0])
        object.__setattr__(self, "_coord_cols", coord_arr[:, 1])

    @property
    def n_characteristics(self) -> int:
        return len(self.characteristics)

    @property
    def n_level_columns(self) -> int:
        return len(self.level_columns)

    @property
    def n_free(self) -> int:
        return 2 * self.n_characteristics + len(self.beta_coords)

    def param_index(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown parameter {name!r}") from None

    # -- coefficient packing ------------------------------------------------

    def unpack(self, vector: np.ndarray) -> "CoefficientSet":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.n_free,):
            raise ValueError(f"expected vector of length {self.n_free}")
        D = self.n_characteristics
        return CoefficientSet(
            vector[:D].copy(), vector[D : 2 * D].copy(), self.effects_matrix(vector)
        )

    def pack(self, coeffs: "CoefficientSet") -> np.ndarray:
        D = self.n_characteristics
        if coeffs.effects.shape != (self.n_level_columns, D):
            raise ValueError("effects matrix shape mismatch")
        free = np.zeros((self.n_level_columns, D), dtype=bool)
        for d, k in self.beta_coords:
            free[k, d] = True
        if np.any(coeffs.effects[~free] != 0.0):
            raise ValueError("nonzero effect outside the mask-allowed coordinates")
        vec = np.concatenate(
            [
                np.asarray(coeffs.gamma, dtype=float),
                np.asarray(coeffs.beta0, dtype=float),
                np.array([coeffs.effects[k, d] for d, k in self.beta_coords]),
            ]
        )
        return vec

    def prior_mean_vector(self) -> np.ndarray:
        vec = np.zeros(self.n_free)
        vec[: self.n_characteristics] = GAMMA_PRIOR_MEAN
        return vec

    def effects_matrix(self, vector: np.ndarray) -> np.ndarray:
        """Scatter the effect block of a packed vector into a dense
        (level column x characteristic) matrix."""
        D = self.n_characteristics
        W = np.zeros((self.n_level_columns, D))
        W[self._coord_cols, self._coord_chars] = vector[2 * D :]
        return W


@dataclass
class CoefficientSet:
    """One coefficient draw: baseline logits, base rates, and the dense
    level-effect matrix (zero wherever the mask disallows the pair)."""

    gamma: np.ndarray   # (D,)
    beta0: np.ndarray   # (D,)
    effects: np.ndarray  # (n_level_columns, D)


@dataclass(frozen=True)
class EncodedDataset:
    """Column-major arrays for a batch of encoded cases with known PMI."""

    case_ids: tuple[str, ...]
    level_index: np.ndarray   # (n, C) int
    design: np.ndarray        # (n, K) one-hot over non-reference level columns
    tau: np.ndarray           # (n,) log(1 + pmi_days)
    values: np.ndarray        # (n, D) observation values in [0, 1]
    observed: np.ndarray      # (n, D) float mask, 1 where observed
    design_tau: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "design_tau", self.design * self.tau[:, None])

    def __len__(self) -> int:
        return len(self.case_ids)


def level_design_row(structure: ModelStructure, level_index: np.ndarray) -> np.ndarray:
    row = np.zeros(structure.n_level_columns)
    for k, (c, lvl) in enumerate(structure.level_columns):
        if level_index[c] == lvl:
            row[k] = 1.0
    return row


def encode_dataset(structure: ModelStructure, cases: list[EncodedCase]) -> EncodedDataset:
    n = len(cases)
    C = len(structure.covariates)
    D = structure.n_characteristics
    K = structure.n_level_columns
    level_index = np.zeros((n, C), dtype=np.int64)
    design = np.zeros((n, K))
    tau = np.zeros(n)
    values = np.zeros((n, D))
    observed = np.zeros((n, D))
    for i, case in enumerate(cases):
        if case.pmi_days is None:
            raise SchemaError(f"case {case.case_id!r} has no PMI; cannot enter a fit dataset")
        level_index[i] = case.level_index
        design[i] = level_design_row(structure, case.level_index)
        tau[i] = np.log1p(case.pmi_days)
        values[i] = case.values
        observed[i] = case.observed.astype(float)
    return EncodedDataset(
        tuple(c.case_id for c in cases), level_index, design, tau, values, observed
    )


# -- single-case operations -------------------------------------------------

def total_rate(structure: ModelStructure, case: EncodedCase, coeffs: CoefficientSet, d: int) -> float:
    """Case-specific rate for characteristic d: base rate plus the level
    effects of every mask-allowed covariate at the case's levels."""
    z = level_design_row(structure, case.level_index)
    return float(coeffs.beta0[d] + z @ coeffs.effects[:, d])


def char_log_odds(structure: ModelStructure, case: EncodedCase, coeffs: CoefficientSet, d: int) -> float:
    if case.pmi_days is None:
        raise ValueError("case has no PMI")
    return float(coeffs.gamma[d] + np.log1p(case.pmi_days) * total_rate(structure, case, coeffs, d))


def case_log_lik(structure: ModelStructure, case: EncodedCase, coeffs: CoefficientSet) -> float:
    """Bernoulli log-likelihood over the observed characteristics only."""
    total = 0.0
    for d in np.where(case.observed)[0]:
        z = char_log_odds(structure, case, coeffs, int(d))
        y = case.values[d]
        total += y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z)
    return float(total)


# -- vectorized posterior ----------------------------------------------------

def _b_extra(structure: ModelStructure, data: EncodedDataset, vector: np.ndarray) -> np.ndarray:
    if structure.beta_coords:
        return data.design @ structure.effects_matrix(vector)
    return np.zeros((len(data), structure.n_characteristics))


def data_log_lik(structure: ModelStructure, data: EncodedDataset, vector: np.ndarray) -> float:
    D = structure.n_characteristics
    value, _ = loglik_and_resid(
        data.values, data.observed, data.tau, vector[:D], vector[D : 2 * D],
        _b_extra(structure, data, vector),
    )
    return value


def log_prior_and_grad(structure: ModelStructure, vector: np.ndarray) -> tuple[float, np.ndarray]:
    centered = vector - structure.prior_mean_vector()
    value = float(np.sum(_LOG_NORM_CONST - 0.5 * (centered / PRIOR_SD) ** 2))
    grad = -centered / PRIOR_SD**2
    return value, grad


def log_prior(structure: ModelStructure, vector: np.ndarray) -> float:
    return log_prior_and_grad(structure, vector)[0]


def log_posterior_and_grad(
    structure: ModelStructure,
    data: EncodedDataset | None,
    vector: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Unnormalized log posterior and its exact gradient over the packed
    free-parameter vector. ``data=None`` or an empty dataset reduces to the
    prior. Case terms are accumulated in dataset order (fixed reduction
    order, so identical inputs give bit-identical results)."""
    vector = np.asarray(vector, dtype=float)
    value, grad = log_prior_and_grad(structure, vector)
    if data is None or len(data) == 0:
        return value, grad

    D = structure.n_characteristics
    ll, resid = loglik_and_resid(
        data.values, data.observed, data.tau, vector[:D], vector[D : 2 * D],
        _b_extra(structure, data, vector),
    )
    value += ll
    grad[:D] += resid.sum(axis=0)
    grad[D : 2 * D] += data.tau @ resid
    if structure.beta_coords:
        dW = data.design_tau.T @ resid  # (K, D)
        grad[2 * D :] += dW[structure._coord_cols, structure._coord_chars]
    return value, grad


def char_probs(structure: ModelStructure, vector: np.ndarray, design: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """P(characteristic present) for each (case, characteristic) under one
    coefficient vector; ``design`` is (n, K), ``tau`` is (n,)."""
    D = structure.n_characteristics
    gamma = vector[:D]
    beta0 = vector[D : 2 * D]
    B = np.broadcast_to(beta0, (design.shape[0], D)).copy()
    if structure.beta_coords:
        B += design @ structure.effects_matrix(vector)
    return sigmoid(gamma[None, :] + np.asarray(tau)[:, None] * B)


def posterior_mean_char_probs(
    structure: ModelStructure,
    draws: np.ndarray,
    design: np.ndarray,
    tau: np.ndarray,
) -> np.ndarray:
    """Posterior-predictive probability of each characteristic: the mean of
    ``char_probs`` over coefficient draws (rows of ``draws``)."""
    acc = np.zeros((design.shape[0], structure.n_characteristics))
    for vec in draws:
        acc += char_probs(structure, vec, design, tau)
    return acc / len(draws)
