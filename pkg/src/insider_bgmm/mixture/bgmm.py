"""Variational Bayesian GMM with a truncated stick-breaking (Dirichlet process) prior.

Generative model, truncated at ``T`` components::

    v_t ~ Beta(1, gamma)             t < T,  v_T = 1
    pi_t = v_t * prod_{s<t} (1 - v_s)
    Lambda_t ~ Wishart(W0, nu0)
    mu_t | Lambda_t ~ N(m0, (beta0 Lambda_t)^-1)
    z_n ~ Cat(pi),  x_n | z_n = t ~ N(mu_t, Lambda_t^-1)

The mean-field posterior q(z) q(v) q(mu, Lambda) is fitted by coordinate
ascent, plus bound-checked merge moves.  Each update is the exact optimum of
the evidence lower bound in its block, so the bound never decreases.

The Normal-Wishart scale is ``W0^-1 = nu0 S0 + reg_covar I`` so that the
prior's expected covariance ``(nu0 W0)^-1`` is about ``S0``, the pooled
within-cluster scatter of the k-means initialization.  Bishop's
``W0^-1 = S0`` would expect covariances ``nu0`` times tighter than the data
show, which makes a private component for a handful of outlying points cheap.
``reg_covar`` enters only through the prior, so every update stays an exact
block optimum.  Directions in which the data have no spread keep posterior
variance ``reg_covar / nu_t``, which penalizes small components.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import betaln, digamma, gammaln

from ..errors import ConfigError, FitError
from .em import IterationCallback, as_data, kmeans_responsibilities
from .gaussian import row_logsumexp
from .model import FitConfig, FitReport, MixtureModel, effective_components

LOG_2PI = np.log(2.0 * np.pi)
LOG_2 = np.log(2.0)
LOG_PI = np.log(np.pi)
MERGE_REFINE_SWEEPS = 5
MERGE_SHORTLIST = 3


def truncation_level(n_points: int, k_max: int) -> int:
    """Short histories cannot support ``k_max`` components; cap at half the points."""
    if n_points < 2 * k_max:
        return max(1, n_points // 2)
    return k_max


@dataclass(frozen=True)
class _Prior:
    gamma: float
    beta: float
    nu: float
    mean: np.ndarray  # m0
    scale_inv: np.ndarray  # W0^-1
    scale_inv_chol: np.ndarray
    log_det_scale: float  # log|W0|


@dataclass
class _Posterior:
    stick_a: np.ndarray  # (T-1,)
    stick_b: np.ndarray
    beta: np.ndarray  # (T,)
    nu: np.ndarray
    mean: np.ndarray  # (T, D)
    scale_inv_chol: np.ndarray  # (T, D, D) lower Cholesky of W_t^-1

    @property
    def log_det_scale(self) -> np.ndarray:
        # log|W_t| = -log|W_t^-1|
        return -2.0 * np.log(np.diagonal(self.scale_inv_chol, axis1=1, axis2=2)).sum(axis=1)

    @cached_property
    def whitener(self) -> np.ndarray:
        """``L_t^-1`` for ``L_t = chol(W_t^-1)``, so ``W_t = L_t^-T L_t^-1``."""
        d = self.mean.shape[1]
        return np.linalg.solve(self.scale_inv_chol, np.broadcast_to(np.eye(d), self.scale_inv_chol.shape))


def _make_prior(X: np.ndarray, config: FitConfig, init_resp: np.ndarray) -> _Prior:
    n, d = X.shape
    if config.covariance_prior == "total":
        cov = np.atleast_2d(np.cov(X.T, bias=True))
    else:
        # pooled scatter around the initial hard-assignment centers; the total
        # covariance would also count between-cluster spread and punish tight
        # components enough to pool well-separated clusters
        nk = np.maximum(init_resp.sum(axis=0), 1.0)
        centers = (init_resp.T @ X) / nk[:, None]
        diff = X - init_resp @ centers
        cov = diff.T @ diff / n
    nu = float(config.degrees_of_freedom_prior) if config.degrees_of_freedom_prior is not None else float(d)
    if nu <= d - 1:
        raise ConfigError(f"degrees_of_freedom_prior must exceed D - 1 = {d - 1}")
    scale_inv = nu * cov + config.reg_covar * np.eye(d)
    try:
        chol = np.linalg.cholesky(scale_inv)
    except np.linalg.LinAlgError:
        raise FitError("prior covariance is singular (e.g. identical points); use reg_covar > 0") from None
    return _Prior(
        gamma=config.gamma,
        beta=config.mean_precision_prior,
        nu=nu,
        mean=X.mean(axis=0),
        scale_inv=scale_inv,
        scale_inv_chol=chol,
        log_det_scale=-2.0 * float(np.log(np.diag(chol)).sum()),
    )


def _update_posterior(X: np.ndarray, resp: np.ndarray, prior: _Prior) -> _Posterior:
    n, d = X.shape
    nk = resp.sum(axis=0)
    tail = np.cumsum(nk[::-1])[::-1]  # sum_{s >= t} N_s
    stick_a = 1.0 + nk[:-1]
    stick_b = prior.gamma + tail[1:]
    beta = prior.beta + nk
    nu = prior.nu + nk
    # moments about m0 keep the scatter well conditioned for data far from the origin
    xc = X - prior.mean
    sum_x = resp.T @ xc
    mean = prior.mean + sum_x / beta[:, None]
    weighted = resp.T[:, :, None] * xc[None, :, :]  # (T, N, D)
    second = np.matmul(np.swapaxes(weighted, 1, 2), xc)
    # W_t^-1 = W0^-1 + sum_n r_nt xc xc^T - beta_t (m_t - m0)(m_t - m0)^T
    dm = sum_x / beta[:, None]
    s = prior.scale_inv + second - beta[:, None, None] * np.einsum("ti,tj->tij", dm, dm)
    chol = np.linalg.cholesky(0.5 * (s + np.swapaxes(s, 1, 2)))
    return _Posterior(stick_a, stick_b, beta, nu, mean, chol)


def _expected_log_weights(post: _Posterior) -> np.ndarray:
    dg_ab = digamma(post.stick_a + post.stick_b)
    log_v = digamma(post.stick_a) - dg_ab
    log_1mv = digamma(post.stick_b) - dg_ab
    out = np.zeros(post.beta.shape[0])
    out[:-1] = log_v
    out[1:] += np.cumsum(log_1mv)
    return out


def _expected_log_det_precision(post: _Posterior, d: int) -> np.ndarray:
    i = np.arange(d)
    return digamma(0.5 * (post.nu[:, None] - i[None, :])).sum(axis=1) + d * LOG_2 + post.log_det_scale


def _log_rho(X: np.ndarray, post: _Posterior, log_det_prec: np.ndarray) -> np.ndarray:
    """Unnormalized log responsibilities E[log pi_t] + E[log N(x_n | mu_t, Lambda_t^-1)]."""
    d = X.shape[1]
    z = np.matmul(X[None, :, :] - post.mean[:, None, :], np.swapaxes(post.whitener, 1, 2))  # (T, N, D)
    maha = (z * z).sum(axis=2).T
    out = -0.5 * (d * LOG_2PI + d / post.beta + post.nu * maha - log_det_prec)
    return out + _expected_log_weights(post)


def _kl_sticks(post: _Posterior, prior: _Prior) -> float:
    a, b = post.stick_a, post.stick_b
    g = prior.gamma
    kl = (
        betaln(1.0, g)
        - betaln(a, b)
        + (a - 1.0) * digamma(a)
        + (b - g) * digamma(b)
        + (1.0 + g - a - b) * digamma(a + b)
    )
    return float(kl.sum())


def _log_wishart_norm(log_det_scale: np.ndarray | float, nu: np.ndarray | float, d: int) -> np.ndarray:
    # log B(W, nu) = -nu/2 log|W| - nu d/2 log 2 - log Gamma_d(nu/2)
    nu = np.asarray(nu, dtype=float)
    # log Gamma_d(a) = d(d-1)/4 log pi + sum_j log Gamma(a - j/2)
    lg = 0.25 * d * (d - 1) * LOG_PI + gammaln(0.5 * nu[..., None] - 0.5 * np.arange(d)).sum(axis=-1)
    return -0.5 * nu * log_det_scale - 0.5 * nu * d * LOG_2 - lg


def _kl_normal_wishart(post: _Posterior, prior: _Prior, log_det_prec: np.ndarray) -> float:
    d = post.mean.shape[1]
    a = np.matmul(post.whitener, prior.scale_inv_chol)
    trace = np.einsum("tij,tij->t", a, a)  # tr(W_t W0^-1)
    z = np.einsum("tij,tj->ti", post.whitener, post.mean - prior.mean)
    quad = np.einsum("ti,ti->t", z, z)
    e_log_q = _log_wishart_norm(post.log_det_scale, post.nu, d) + 0.5 * (post.nu - d - 1) * log_det_prec - 0.5 * post.nu * d
    e_log_p = (
        _log_wishart_norm(prior.log_det_scale, prior.nu, d)
        + 0.5 * (prior.nu - d - 1) * log_det_prec
        - 0.5 * post.nu * trace
    )
    gauss = 0.5 * (
        d * prior.beta / post.beta - d + d * np.log(post.beta / prior.beta) + prior.beta * post.nu * quad
    )
    return float(np.sum(e_log_q - e_log_p + gauss))


def _to_model(post: _Posterior) -> MixtureModel:
    e_v = post.stick_a / (post.stick_a + post.stick_b)
    weights = np.empty(post.beta.shape[0])
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - e_v)])
    weights[:-1] = e_v * remaining[:-1]
    weights[-1] = remaining[-1]
    # covariance = E[Lambda]^-1 = W_t^-1 / nu_t
    covs = np.einsum("tij,tkj->tik", post.scale_inv_chol, post.scale_inv_chol) / post.nu[:, None, None]
    return MixtureModel(weights, post.mean.copy(), covs)


def _sweep(X: np.ndarray, resp: np.ndarray, prior: _Prior) -> tuple[_Posterior, np.ndarray, float]:
    """Update q(v), q(mu, Lambda) from ``resp``, then q(z); return the bound at the new state."""
    post = _update_posterior(X, resp, prior)
    log_det_prec = _expected_log_det_precision(post, X.shape[1])
    log_rho = _log_rho(X, post, log_det_prec)
    norm = row_logsumexp(log_rho)
    resp = np.exp(log_rho - norm[:, None])
    # at the optimal q(z), sum_nt r (log rho - log r) collapses to sum_n logsumexp_t log rho
    elbo = float(norm.sum()) - _kl_sticks(post, prior) - _kl_normal_wishart(post, prior, log_det_prec)
    return post, resp, elbo


def _elbo_for(X: np.ndarray, resp: np.ndarray, prior: _Prior) -> float:
    """Bound at (q(z) = resp, q(params) optimal for resp); resp need not be optimal."""
    post = _update_posterior(X, resp, prior)
    log_det_prec = _expected_log_det_precision(post, X.shape[1])
    log_rho = _log_rho(X, post, log_det_prec)
    pos = resp > 0
    expected = float(np.sum(resp[pos] * (log_rho[pos] - np.log(resp[pos]))))
    return expected - _kl_sticks(post, prior) - _kl_normal_wishart(post, prior, log_det_prec)


def _best_merge(
    X: np.ndarray, resp: np.ndarray, prior: _Prior, current: float, refine: int
) -> tuple[np.ndarray, float] | None:
    """Pool every pair of occupied components, refine the most promising
    candidates with a few sweeps, and return the best one whose bound beats
    ``current``.

    Every pair gets one sweep; only the ``MERGE_SHORTLIST`` best by that
    bound get the remaining ``refine - 1`` sweeps.
    """
    active = np.flatnonzero(resp.sum(axis=0) > 0.5)
    screened = []
    for a, i in enumerate(active):
        for j in active[a + 1 :]:
            cand = resp.copy()
            cand[:, i] += cand[:, j]
            cand[:, j] = 0.0
            _, cand, elbo = _sweep(X, cand, prior)
            screened.append((elbo, len(screened), cand))
    screened.sort(key=lambda it: (-it[0], it[1]))
    best = None
    for elbo, _, cand in screened[:MERGE_SHORTLIST]:
        for _ in range(refine - 1):
            _, cand, elbo = _sweep(X, cand, prior)
        if elbo > current and (best is None or elbo > best[1]):
            best = (cand, elbo)
    return best


def _fit_once(
    X: np.ndarray,
    resp: np.ndarray,
    config: FitConfig,
    prior: _Prior,
    callback: IterationCallback | None,
) -> tuple[MixtureModel, FitReport]:
    n = X.shape[0]
    report = FitReport()
    trace = report.objective_trace
    while True:
        start = len(trace)
        report.converged = False
        for _ in range(config.max_iter):
            post, resp, elbo = _sweep(X, resp, prior)
            report.iterations += 1
            if callback is not None:
                callback(report.iterations, _to_model(post))
            trace.append(elbo)
            if len(trace) - start > 1 and abs(trace[-1] - trace[-2]) / n < config.tol:
                report.converged = True
                break
        if not config.merge_moves:
            break
        merged = _best_merge(X, resp, prior, trace[-1], MERGE_REFINE_SWEEPS)
        if merged is None:
            break
        resp = merged[0]
        trace.append(merged[1])
    model = _to_model(post)
    report.effective_k = effective_components(model, config.weight_floor)
    return model, report


def fit_bgmm(
    X: np.ndarray, config: FitConfig, callback: IterationCallback | None = None
) -> tuple[MixtureModel, FitReport]:
    """Fit a truncated Dirichlet-process GMM by coordinate-ascent variational inference.

    ``config.k`` is the truncation level, lowered by :func:`truncation_level`
    for short inputs.  The returned model holds posterior-expected weights,
    the posterior mean locations and ``E[Lambda]^-1`` covariances for every
    component, including those the data leave at near-zero weight.  The
    report's trace is the evidence lower bound after each sweep.

    Coordinate ascent can stall with one cluster split across several
    components.  With ``config.merge_moves`` (the default), after each
    converged phase every pair of occupied components is pooled and the one
    pooling that most raises the bound is accepted, then ascent resumes.  A
    pooled state enters the trace only when it beats the current bound.
    """
    X = as_data(X, 2)
    truncation = truncation_level(X.shape[0], config.k)
    rng = np.random.default_rng(config.seed)
    inits = [kmeans_responsibilities(X, truncation, rng) for _ in range(config.n_init)]
    # one prior for all restarts so their bounds are comparable
    prior = _make_prior(X, config, inits[0])
    best: tuple[MixtureModel, FitReport] | None = None
    for resp in inits:
        model, report = _fit_once(X, resp, config, prior, callback)
        if best is None or report.objective_trace[-1] > best[1].objective_trace[-1]:
            best = (model, report)
    return best
