"""Gaussian and Gaussian-mixture log densities.

Everything is computed from Cholesky factors and combined in log space;
raw densities are never materialized.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import DimensionError
from .model import MixtureModel

LOG_2PI = np.log(2.0 * np.pi)


def row_logsumexp(a: np.ndarray) -> np.ndarray:
    """``log(sum(exp(a), axis=1))`` for a 2-d array; all ``-inf`` rows give ``-inf``.

    A lean replacement for ``scipy.special.logsumexp``, whose argument
    handling dominates the cost on the small matrices fitted here.
    """
    m = a.max(axis=1)
    m[~np.isfinite(m)] = 0.0
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - m[:, None]).sum(axis=1)) + m


def _log_density_chol(X: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    z = solve_triangular(chol, (X - mean).T, lower=True, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * LOG_2PI + log_det + np.sum(z * z, axis=0))


def gaussian_log_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """log N(x | mean, cov); raises ``numpy.linalg.LinAlgError`` if cov is not PD."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if x.shape != mean.shape or cov.shape != (x.size, x.size):
        raise DimensionError(f"shape mismatch: x {x.shape}, mean {mean.shape}, cov {cov.shape}")
    chol = np.linalg.cholesky(cov)
    return float(_log_density_chol(x[None, :], mean, chol)[0])


def component_log_densities(X: np.ndarray, model: MixtureModel) -> np.ndarray:
    """(N, K) matrix of log N(x_n | mu_k, Sigma_k)."""
    X = _as_matrix(X, model.dim)
    chol = model.cholesky
    out = np.empty((X.shape[0], model.k))
    for k in range(model.k):
        out[:, k] = _log_density_chol(X, model.means[k], chol[k])
    return out


def mixture_log_likelihoods(X: np.ndarray, model: MixtureModel) -> np.ndarray:
    """Per-point log sum_k phi_k N(x | mu_k, Sigma_k), shape (N,)."""
    X = _as_matrix(X, model.dim)
    if X.shape[0] == 0:
        return np.zeros(0)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return row_logsumexp(component_log_densities(X, model) + log_w)


def mixture_log_likelihood(x: np.ndarray, model: MixtureModel) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise DimensionError("expected a single vector")
    return float(mixture_log_likelihoods(x[None, :], model)[0])


def dataset_log_likelihood(X: np.ndarray, model: MixtureModel) -> float:
    return float(np.sum(mixture_log_likelihoods(X, model)))


def _as_matrix(X: np.ndarray, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return X.reshape(0, dim)
    X = np.atleast_2d(X)
    if X.shape[1] != dim:
        raise DimensionError(f"expected vectors of length {dim}, got {X.shape[1]}")
    return X
