"""Seeded k-means with k-means++ initialisation.

Plain Lloyd iterations on float64 points.  Ties in assignment go to the
lowest cluster index, and a cluster that empties out is reseeded to the
point currently farthest from its assigned centre, so every centre stays
meaningful.  Fully deterministic given the seed.
"""

from __future__ import annotations

import numpy as np


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, clipped at zero."""
    p2 = np.sum(points * points, axis=1, keepdims=True)
    c2 = np.sum(centers * centers, axis=1)
    d = p2 - 2.0 * (points @ centers.T) + c2
    return np.maximum(d, 0.0)


def _init_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[j:j + 1]).ravel())
    return centers


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 100,
           tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Cluster points (n, d) into k groups; returns (labels (n,), centers (k, d))."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-d, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = _init_plus_plus(points, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d = _sq_dists(points, centers)
        labels = np.argmin(d, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = points[members].mean(axis=0)
            else:
                # reseed an empty cluster at the worst-served point
                assigned = d[np.arange(n), labels]
                far = int(np.argmax(assigned))
                new_centers[j] = points[far]
                labels[far] = j
        shift = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        if shift <= tol:
            break
    d = _sq_dists(points, centers)
    labels = np.argmin(d, axis=1)
    return labels, centers
