"""Lloyd's k-means with k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, D)
    labels: np.ndarray  # (n,)
    n_iter: int


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def assign(x, centroids) -> np.ndarray:
    """Index of the nearest centroid for each row (lowest index on ties)."""
    return np.argmin(_sq_dists(np.atleast_2d(np.asarray(x, dtype=np.float64)), centroids), axis=1)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = [x[rng.integers(n)]]
    closest = _sq_dists(x, centroids[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen centroid
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centroids)


def kmeans(
    x, k: int, rng: np.random.Generator, max_iter: int = 100, tol: float = 1e-6
) -> KMeansResult:
    """Cluster rows of ``x``; stops when no centroid moves more than ``tol``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ConfigError(f"n_clusters must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"n_clusters={k} exceeds the number of instances ({n})")
    centroids = kmeans_pp_init(x, k, rng)
    labels = assign(x, centroids)
    it = 0
    for it in range(1, max_iter + 1):
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        labels = assign(x, centroids)
        if shift <= tol:
            break
    return KMeansResult(centroids, labels, it)
