"""Euclidean points, clustering cost, and a seeded approximate clusterer.

Points are plain numpy arrays: a point set is an (n, d) float array with an
optional (n,) positive weight vector. The clustering objective is
sum_i w_i * min_c ||x_i - c||^z with z=1 (k-median) or z=2 (k-means).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

BRUTE_FORCE_LIMIT = 10**6


class TooManyCombinationsError(ValueError):
    """The exhaustive search space exceeds the combinatorial guard."""


@dataclass
class WeightedSet:
    """Weighted point set; entries with weight <= 0 are dropped on construction."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if self.weights is None:
            w = np.ones(len(pts))
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError("points and weights length mismatch")
        keep = w > 0
        self.points = pts[keep]
        self.weights = w[keep]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def union(self, other: "WeightedSet") -> "WeightedSet":
        """Exact union; coincident points are combined into one entry."""
        if len(self) == 0:
            return WeightedSet(other.points.copy(), other.weights.copy())
        if len(other) == 0:
            return WeightedSet(self.points.copy(), self.weights.copy())
        pts = np.vstack([self.points, other.points])
        w = np.concatenate([self.weights, other.weights])
        return dedupe(pts, w)


def dedupe(points: np.ndarray, weights: np.ndarray) -> WeightedSet:
    """Combine rows with identical coordinates, summing their weights."""
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    w = np.bincount(inverse, weights=weights, minlength=len(uniq))
    return WeightedSet(uniq, w)


def check_in_ball(points: np.ndarray, radius: float) -> None:
    """Raise ValueError if any point lies outside the radius ball."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    norms = np.linalg.norm(pts, axis=1)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinate")
    bad = norms > radius * (1 + 1e-12)
    if np.any(bad):
        raise ValueError(
            f"point norm {norms[bad][0]:.6g} exceeds ball radius {radius:.6g}"
        )


def _dist_pow(points: np.ndarray, centers: np.ndarray, z: int) -> np.ndarray:
    """(n, m) matrix of ||x_i - c_j||^z."""
    diff = points[:, None, :] - centers[None, :, :]
    sq = np.einsum("nmd,nmd->nm", diff, diff)
    if z == 2:
        return sq
    return np.sqrt(sq)


def cost(
    centers: np.ndarray,
    points: np.ndarray,
    weights: np.ndarray | None = None,
    z: int = 2,
) -> float:
    """Weighted k-clustering cost of `points` against `centers`.

    Returns sum_i w_i * min_j ||x_i - c_j||^z. An empty point set costs 0;
    an empty center set is a contract violation.
    """
    if z not in (1, 2):
        raise ValueError("z must be 1 (k-median) or 2 (k-means)")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise ValueError("empty center set")
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return 0.0
    points = np.atleast_2d(points)
    d = _dist_pow(points, centers, z).min(axis=1)
    if weights is None:
        return float(d.sum())
    return float(np.dot(np.asarray(weights, dtype=float), d))


def _kmeanspp_seed(
    points: np.ndarray,
    weights: np.ndarray,
    k: int,
    z: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """k-means++ style seeding on a weighted set; duplicates points if needed."""
    n = len(points)
    probs = weights / weights.sum()
    first = int(rng.choice(n, p=probs))
    chosen = [first]
    d_best = _dist_pow(points, points[first : first + 1], z)[:, 0]
    while len(chosen) < k:
        mass = weights * d_best
        total = mass.sum()
        if total <= 0:
            # fewer distinct points than k: pad with already chosen points
            chosen.append(chosen[0])
            continue
        nxt = int(rng.choice(n, p=mass / total))
        chosen.append(nxt)
        d_new = _dist_pow(points, points[nxt : nxt + 1], z)[:, 0]
        d_best = np.minimum(d_best, d_new)
    return points[chosen].copy()


def _weighted_median_1d(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w)
    half = 0.5 * cum[-1]
    idx = int(np.searchsorted(cum, half))
    return float(v[min(idx, len(v) - 1)])


def approx_cluster(
    points: np.ndarray,
    weights: np.ndarray | None,
    k: int,
    z: int = 2,
    seed: int | np.random.Generator = 0,
    lloyd_iters: int = 20,
) -> np.ndarray:
    """Seeded approximate k-clustering: k-means++ seeding plus Lloyd refinement.

    For z=2 the center update is the weighted mean; for z=1 it is the
    coordinate-wise weighted median. The best iterate (by cost) is returned,
    so increasing lloyd_iters never increases the returned cost. Nearest-
    center ties break toward the lowest center index. Deterministic given
    the seed.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if n == 0:
        raise ValueError("empty input set")
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    centers = _kmeanspp_seed(points, weights, k, z, rng)
    best = centers.copy()
    best_cost = cost(centers, points, weights, z)
    for _ in range(lloyd_iters):
        assign = np.argmin(_dist_pow(points, centers, z), axis=1)
        new_centers = centers.copy()
        for j in range(k):
            mask = assign == j
            if not mask.any():
                continue
            if z == 2:
                new_centers[j] = np.average(points[mask], axis=0, weights=weights[mask])
            else:
                new_centers[j] = [
                    _weighted_median_1d(points[mask][:, dim], weights[mask])
                    for dim in range(points.shape[1])
                ]
        centers = new_centers
        c = cost(centers, points, weights, z)
        if c < best_cost:
            best_cost = c
            best = centers.copy()
    return best


def brute_force_opt(
    points: np.ndarray,
    weights: np.ndarray | None,
    k: int,
    z: int,
    candidate_pool: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Exact optimum over all k-subsets of candidate_pool (test oracle).

    Guards against search spaces above BRUTE_FORCE_LIMIT combinations.
    """
    pool = np.atleast_2d(np.asarray(candidate_pool, dtype=float))
    m = len(pool)
    if k <= 0 or k > m:
        raise ValueError("k out of range for candidate pool")
    if math.comb(m, k) > BRUTE_FORCE_LIMIT:
        raise TooManyCombinationsError(
            f"C({m},{k}) exceeds brute-force guard {BRUTE_FORCE_LIMIT}"
        )
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if weights is None:
        weights = np.ones(len(points))
    weights = np.asarray(weights, dtype=float)
    dists = _dist_pow(points, pool, z)  # (n, m)
    best_cost = math.inf
    best_combo: tuple[int, ...] | None = None
    for combo in itertools.combinations(range(m), k):
        c = float(np.dot(weights, dists[:, combo].min(axis=1)))
        if c < best_cost:
            best_cost = c
            best_combo = combo
    assert best_combo is not None
    return pool[list(best_combo)].copy(), best_cost
