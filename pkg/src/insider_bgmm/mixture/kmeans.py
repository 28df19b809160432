from __future__ import annotations

import numpy as np


def _sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding. Falls back to uniform picks once every point coincides with a center."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[i] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[i : i + 1])[:, 0])
    return centers


def kmeans(
    X: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ seeds. Returns (labels, centers).

    ``tol`` is relative to the mean per-feature variance, as in common
    k-means implementations.
    """
    X = np.asarray(X, dtype=float)
    centers = kmeans_plusplus(X, k, rng)
    scale = tol * float(np.mean(np.var(X, axis=0)))
    labels = np.zeros(X.shape[0], dtype=int)
    for _ in range(max_iter):
        labels = np.argmin(_sq_dists(X, centers), axis=1)
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
        shift = float(((new - centers) ** 2).sum())
        centers = new
        if shift <= scale:
            break
    labels = np.argmin(_sq_dists(X, centers), axis=1)
    return labels, centers
