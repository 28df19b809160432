"""Data builders shared by several test modules."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def separated_clusters(k: int, seed: int, n: int = 200, sep: float = 6.0, d: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """``k`` unit-variance Gaussian blobs whose centers are at least ``sep`` apart.

    Returns ``(X, centers)``; rows of X are grouped by cluster.
    """
    rng = np.random.default_rng(seed)
    centers: list[np.ndarray] = []
    half = sep * max(k, 1) / 1.2
    while len(centers) < k:
        c = rng.uniform(-half, half, size=d)
        if all(np.linalg.norm(c - o) >= sep for o in centers):
            centers.append(c)
    X = np.concatenate([rng.normal(c, 1.0, size=(n, d)) for c in centers])
    return X, np.array(centers)


def random_gmm_data(seed: int, n: int = 300, k: int = 3, d: int = 2) -> np.ndarray:
    """Samples from a random full-covariance mixture; components may overlap."""
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.full(k, 2.0))
    means = rng.uniform(-5.0, 5.0, size=(k, d))
    covs = []
    for _ in range(k):
        a = rng.normal(size=(d, d))
        covs.append(a @ a.T + 0.1 * np.eye(d))
    z = rng.choice(k, size=n, p=weights)
    return np.array([rng.multivariate_normal(means[j], covs[j]) for j in z])


def random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return a @ a.T + d * 0.1 * np.eye(d)


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(score_pos > score_neg) + P(tie) / 2, counted over every pair."""
    pos, neg = scores[labels], scores[~labels]
    wins = ties = 0
    for p in pos:
        for q in neg:
            wins += p > q
            ties += p == q
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
