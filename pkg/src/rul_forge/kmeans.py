"""Lloyd's k-means with k-means++ seeding, used to find operating regimes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np


class KMeansError(ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(X, C):
    # (n, k) squared euclidean distances, computed directly for exact ties
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def assign(centroids: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; ties go to the lowest centroid index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.argmin(_sq_dists(X, np.asarray(centroids, dtype=np.float64)), axis=1)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise KMeansError("fewer distinct rows than clusters")
        idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def fit(X: np.ndarray, k: int = 6, seed: int = 0, tol: float = 1e-4, max_iter: int = 300) -> KMeansResult:
    """Cluster rows of ``X``; stops once no centroid moves more than ``tol``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise KMeansError(f"expected a 2-D array, got shape {X.shape}")
    if len(np.unique(X, axis=0)) < k:
        raise KMeansError(f"need at least {k} distinct rows, found {len(np.unique(X, axis=0))}")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, k, rng)
    labels = assign(C, X)
    history = [float(_sq_dists(X, C)[np.arange(len(X)), labels].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        new_C = C.copy()
        for j in range(k):
            members = X[labels == j]
            # an emptied cluster keeps its centroid
            if len(members):
                new_C[j] = members.mean(axis=0)
        shift = np.sqrt(((new_C - C) ** 2).sum(axis=1)).max()
        C = new_C
        labels = assign(C, X)
        history.append(float(_sq_dists(X, C)[np.arange(len(X)), labels].sum()))
        if shift < tol:
            break
    return KMeansResult(C, labels, history, it)
