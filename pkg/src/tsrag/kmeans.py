"""Seeded Lloyd k-means with k-means++ initialization and empty-cluster repair.

The objective history is recorded once per iteration, immediately after the
assignment step, so it is non-increasing by the standard Lloyd argument.
Empty clusters are repaired by donating the point farthest from its current
centroid, which also never increases the next recorded objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class KMeansResult:
    """Final assignment, centroids (exact member means), and objective trace."""

    assignments: np.ndarray
    centroids: np.ndarray
    history: list[float]

    @property
    def objective(self) -> float:
        return self.history[-1]

    @property
    def iterations(self) -> int:
        return len(self.history)


def _objective(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    diff = points - centroids[assign]
    return float((diff * diff).sum())


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, m) squared Euclidean distances; clipped so rounding never goes negative.
    p2 = (points * points).sum(axis=1)[:, None]
    c2 = (centroids * centroids).sum(axis=1)[None, :]
    d = p2 + c2 - 2.0 * points @ centroids.T
    return np.maximum(d, 0.0)


def _plusplus_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, m):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining points coincide with a chosen center; take the
            # first index not yet used so initialization stays deterministic.
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _repair_empty(
    points: np.ndarray,
    centroids: np.ndarray,
    assign: np.ndarray,
    counts: np.ndarray,
) -> bool:
    """Give each empty cluster the point farthest from its own centroid."""
    repaired = False
    for j in range(centroids.shape[0]):
        if counts[j] > 0:
            continue
        dist_own = ((points - centroids[assign]) ** 2).sum(axis=1)
        dist_own[counts[assign] <= 1] = -np.inf
        donor = int(np.argmax(dist_own))
        counts[assign[donor]] -= 1
        assign[donor] = j
        counts[j] += 1
        repaired = True
    return repaired


def _means(points: np.ndarray, assign: np.ndarray, m: int) -> np.ndarray:
    sums = np.zeros((m, points.shape[1]), dtype=np.float64)
    np.add.at(sums, assign, points)
    counts = np.bincount(assign, minlength=m).astype(np.float64)
    return sums / counts[:, None]


def kmeans(
    points: np.ndarray,
    m: int,
    *,
    max_iters: int = 100,
    tol: float = 1e-6,
    seed: int | np.random.Generator = 0,
) -> KMeansResult:
    """Cluster ``points`` (n, d) into ``m`` groups.

    Stops when assignments repeat, the relative objective improvement falls
    below ``tol``, or ``max_iters`` iterations have run. Every cluster in the
    result is non-empty and the returned centroids are the exact means of
    their final members.

    Raises:
        DataError: on empty or non-finite input.
        ConfigError: when m < 1 or m > n.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DataError("kmeans expects a non-empty (n, d) array")
    if not np.isfinite(pts).all():
        raise DataError("kmeans input contains non-finite values")
    n = pts.shape[0]
    if m < 1 or m > n:
        raise ConfigError(f"cluster count m={m} must satisfy 1 <= m <= n={n}")
    if max_iters < 1:
        raise ConfigError("max_iters must be positive")

    if m == n:
        assign = np.arange(n, dtype=np.int64)
        return KMeansResult(assignments=assign, centroids=pts.copy(), history=[0.0])

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centroids = _plusplus_init(pts, m, rng)

    history: list[float] = []
    prev_assign: np.ndarray | None = None
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        assign = np.argmin(_sq_distances(pts, centroids), axis=1).astype(np.int64)
        obj = _objective(pts, centroids, assign)
        history.append(obj)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        if len(history) > 1:
            prev = history[-2]
            if prev <= 0.0 or (prev - obj) < tol * prev:
                break
        prev_assign = assign.copy()

        counts = np.bincount(assign, minlength=m)
        if _repair_empty(pts, centroids, assign, counts):
            prev_assign = None  # repair changed assignments; don't stop on a stale match
        centroids = _means(pts, assign, m)

    # Final centroids are exact means of the final assignment.
    counts = np.bincount(assign, minlength=m)
    if (counts == 0).any():
        _repair_empty(pts, centroids, assign, counts)
    centroids = _means(pts, assign, m)
    return KMeansResult(assignments=assign, centroids=centroids, history=history)
