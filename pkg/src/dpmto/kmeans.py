"""Design-point placement by k-means clustering of uniform samples in the unit square."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

SAMPLES_PER_POINT = 1000
MAX_SWEEPS = 500


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )


def kmeans_pp_init(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new center drawn with probability proportional to D^2."""
    n = len(samples)
    centers = np.empty((k, 2))
    centers[0] = samples[rng.integers(n)]
    closest = np.sum((samples - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[i] = samples[rng.integers(n)]
        else:
            idx = np.searchsorted(np.cumsum(closest), rng.random() * total)
            centers[i] = samples[min(idx, n - 1)]
        closest = np.minimum(closest, np.sum((samples - centers[i]) ** 2, axis=1))
    return centers


def lloyd(samples: np.ndarray, centers: np.ndarray, max_sweeps: int = MAX_SWEEPS):
    """Lloyd iteration until no sample changes cluster or ``max_sweeps`` is hit.

    Returns ``(centers, labels, sweeps)``.
    """
    centers = centers.copy()
    k = len(centers)
    labels = np.argmin(_sq_dists(samples, centers), axis=1)
    for sweep in range(1, max_sweeps + 1):
        counts = np.bincount(labels, minlength=k)
        for axis in range(2):
            sums = np.bincount(labels, weights=samples[:, axis], minlength=k)
            nonempty = counts > 0
            centers[nonempty, axis] = sums[nonempty] / counts[nonempty]
        new_labels = np.argmin(_sq_dists(samples, centers), axis=1)
        if np.array_equal(new_labels, labels):
            return centers, labels, sweep
        labels = new_labels
    return centers, labels, max_sweeps


@lru_cache(maxsize=None)
def _place(d: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.MT19937(seed))
    samples = rng.random((SAMPLES_PER_POINT * d, 2))
    centers, _, _ = lloyd(samples, kmeans_pp_init(samples, d, rng))
    centers.flags.writeable = False
    return centers


def kmeans_place(d: int, seed: int = 0) -> np.ndarray:
    """Locations of ``d`` design points in the unit square, shape ``(d, 2)``.

    Deterministic for a given seed; each ``(d, seed)`` distribution is computed once.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    return _place(int(d), int(seed))
