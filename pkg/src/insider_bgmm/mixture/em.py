"""Maximum-likelihood GMM fitting by expectation maximization."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from ..errors import FitError
from .gaussian import component_log_densities, row_logsumexp
from .kmeans import kmeans
from .model import FitConfig, FitReport, MixtureModel, effective_components

IterationCallback = Callable[[int, MixtureModel], None]


def as_data(X: np.ndarray, min_points: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] < 1:
        raise FitError(f"expected an (N, D) array, got shape {X.shape}")
    if X.shape[0] < min_points:
        raise FitError(f"need at least {min_points} points, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise FitError("data contains non-finite values")
    return X


def kmeans_responsibilities(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    labels, _ = kmeans(X, k, rng)
    resp = np.zeros((X.shape[0], k))
    resp[np.arange(X.shape[0]), labels] = 1.0
    return resp


def _m_step(X: np.ndarray, resp: np.ndarray, reg_covar: float) -> MixtureModel:
    n, d = X.shape
    nk = np.maximum(resp.sum(axis=0), 10 * np.finfo(float).eps)
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((resp.shape[1], d, d))
    for k in range(resp.shape[1]):
        diff = X - means[k]
        covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k].flat[:: d + 1] += reg_covar
    model = MixtureModel(nk / nk.sum(), means, covs)
    try:
        model.cholesky
    except np.linalg.LinAlgError:
        raise FitError(
            "covariance became singular (e.g. identical points); use reg_covar > 0"
        ) from None
    return model


def _e_step(X: np.ndarray, model: MixtureModel) -> tuple[float, np.ndarray]:
    with np.errstate(divide="ignore"):
        weighted = component_log_densities(X, model) + np.log(model.weights)
    norm = row_logsumexp(weighted)
    return float(norm.sum()), np.exp(weighted - norm[:, None])


def _fit_once(
    X: np.ndarray, config: FitConfig, rng: np.random.Generator, callback: IterationCallback | None
) -> tuple[MixtureModel, FitReport]:
    n = X.shape[0]
    model = _m_step(X, kmeans_responsibilities(X, config.k, rng), config.reg_covar)
    report = FitReport()
    if callback is not None:
        callback(0, model)
    for it in range(1, config.max_iter + 1):
        log_lik, resp = _e_step(X, model)
        report.objective_trace.append(log_lik)
        report.iterations = it
        if len(report.objective_trace) > 1 and abs(log_lik - report.objective_trace[-2]) / n < config.tol:
            report.converged = True
            break
        model = _m_step(X, resp, config.reg_covar)
        if callback is not None:
            callback(it, model)
    else:
        report.objective_trace.append(_e_step(X, model)[0])
    report.effective_k = effective_components(model, config.weight_floor)
    return model, report


def fit_gmm_em(
    X: np.ndarray, config: FitConfig, callback: IterationCallback | None = None
) -> tuple[MixtureModel, FitReport]:
    """Fit a fixed-K full-covariance GMM.

    The returned trace holds the dataset log-likelihood of every iterate,
    starting from the k-means++ initialization; the final entry is the
    log-likelihood of the returned model.  With ``n_init > 1`` the run
    with the highest final log-likelihood is kept.
    """
    X = as_data(X, config.k)
    rng = np.random.default_rng(config.seed)
    best: tuple[MixtureModel, FitReport] | None = None
    for _ in range(config.n_init):
        model, report = _fit_once(X, config, rng, callback)
        if best is None or report.objective_trace[-1] > best[1].objective_trace[-1]:
            best = (model, report)
    return best
