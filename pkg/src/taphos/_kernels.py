"""Fused numerical kernels for the Bernoulli likelihood.

The JIT path exists purely for speed; the numpy path computes the same
quantities and is used automatically when numba is unavailable (or when
TAPHOS_PURE_NUMPY is set). Both paths use the branch-stable form of
log(1 + exp(z)) so logits beyond +-30 neither overflow nor lose the tail.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - environment dependent
    if os.environ.get("TAPHOS_PURE_NUMPY"):
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _loglik_resid_numpy(values, observed, tau, gamma, beta0, b_extra):
    z = gamma[None, :] + tau[:, None] * (beta0[None, :] + b_extra)
    a = np.exp(-np.abs(z))
    log1p_a = np.log1p(a)
    softplus = np.maximum(z, 0.0) + log1p_a  # log(1 + e^z)
    ll = observed * (values * z - softplus)
    p = np.where(z >= 0.0, 1.0 / (1.0 + a), a / (1.0 + a))
    resid = observed * (values - p)
    return float(ll.sum()), resid


if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _loglik_resid_jit(values, observed, tau, gamma, beta0, b_extra):  # pragma: no cover - jitted
        n, D = values.shape
        resid = np.zeros((n, D))
        total = 0.0
        for i in range(n):
            t = tau[i]
            for d in range(D):
                o = observed[i, d]
                if o == 0.0:
                    continue
                z = gamma[d] + t * (beta0[d] + b_extra[i, d])
                y = values[i, d]
                if z >= 0.0:
                    a = np.exp(-z)
                    total += o * (y * z - (z + np.log1p(a)))
                    p = 1.0 / (1.0 + a)
                else:
                    a = np.exp(z)
                    total += o * (y * z - np.log1p(a))
                    p = a / (1.0 + a)
                resid[i, d] = o * (y - p)
        return total, resid

    @numba.njit(cache=True, fastmath=False)
    def _grid_loglik_jit(gamma, B, tau_grid, obs_idx, obs_val):  # pragma: no cover - jitted
        # (draw, grid) log-likelihood of one case's observations,
        # gamma/B are (draws, D), tau_grid is (G,)
        L = gamma.shape[0]
        G = tau_grid.shape[0]
        out = np.zeros((L, G))
        for i in range(L):
            for j in range(obs_idx.shape[0]):
                d = obs_idx[j]
                y = obs_val[j]
                g = gamma[i, d]
                b = B[i, d]
                for k in range(G):
                    z = g + tau_grid[k] * b
                    if z >= 0.0:
                        out[i, k] += y * z - (z + np.log1p(np.exp(-z)))
                    else:
                        out[i, k] += y * z - np.log1p(np.exp(z))
        return out


def _grid_loglik_numpy(gamma, B, tau_grid, obs_idx, obs_val):
    L, G = gamma.shape[0], tau_grid.shape[0]
    out = np.zeros((L, G))
    for j, d in enumerate(obs_idx):
        z = gamma[:, d][:, None] + np.multiply.outer(B[:, d], tau_grid)
        softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
        out += obs_val[j] * z - softplus
    return out


def loglik_and_resid(values, observed, tau, gamma, beta0, b_extra):
    """Masked Bernoulli log-likelihood total and the (value - probability)
    residual matrix used by the analytic gradient."""
    if HAVE_NUMBA:
        return _loglik_resid_jit(values, observed, tau, gamma, beta0, b_extra)
    return _loglik_resid_numpy(values, observed, tau, gamma, beta0, b_extra)


def grid_loglik(gamma, B, tau_grid, obs_idx, obs_val):
    """Per-draw, per-grid-point log-likelihood of one case's observed
    characteristics, with case-specific rates ``B`` precomputed."""
    obs_idx = np.asarray(obs_idx, dtype=np.int64)
    obs_val = np.asarray(obs_val, dtype=float)
    if HAVE_NUMBA:
        return _grid_loglik_jit(gamma, B, tau_grid, obs_idx, obs_val)
    return _grid_loglik_numpy(gamma, B, tau_grid, obs_idx, obs_val)
