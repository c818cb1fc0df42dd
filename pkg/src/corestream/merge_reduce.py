"""Streaming merge-and-reduce with a private base level.

The level-0 buffer flushes through a sparse-vector size test; each flush
runs the private histogram construction (snap to unit grid cells, noise the
counts, prune small cells) and enters a dyadic tree whose merges are exact
unions and whose reduces run a sensitivity-sampling coreset at a level-
decaying accuracy schedule gamma_i = gamma / (C * i^2). Every released
summary carries a (kappa, eta1, eta2) certificate maintained by the merge
and reduce algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dp_primitives import AboveThreshold, HorizonExhaustedError, PrivacyLedger
from .geometry import WeightedSet, approx_cluster, dedupe
from .quadtree import ShiftedQuadtree


class InputTooSmallError(ValueError):
    """The dataset is below the size floor the transform requires."""


@dataclass
class Semicoreset:
    """Weighted summary plus its accumulated error certificate."""

    points: np.ndarray
    weights: np.ndarray
    kappa: float = 1.0
    eta1: float = 0.0
    eta2: float = 0.0
    level: int = 0

    def __len__(self) -> int:
        return len(self.points)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def as_weighted_set(self) -> WeightedSet:
        return WeightedSet(self.points.copy(), self.weights.copy())


def merge_certificates(a: Semicoreset, b: Semicoreset) -> tuple[float, float, float]:
    return (max(a.kappa, b.kappa), max(a.eta1, b.eta1), a.eta2 + b.eta2)


def reduce_certificate(kappa: float, eta1: float, eta2: float, gamma: float):
    return ((1.0 + gamma) * kappa, (1.0 - gamma) * eta1, (1.0 + gamma) * eta2)


def schedule_holds(gamma: float, sched_const: float, levels: int = 40) -> bool:
    """Numeric check that the per-level schedule telescopes within gamma/3."""
    prod = 1.0
    for j in range(1, levels + 1):
        prod *= 1.0 + gamma / (sched_const * j * j)
    return prod <= 1.0 + gamma / 3.0


@dataclass
class MRConfig:
    block_size: int
    gamma: float
    epsilon: float
    epsilon1: float
    delta1: float
    horizon: int
    k: int
    dim: int
    z: int = 2
    sched_const: float = 6.0
    failure_prob: float = 1e-6
    xi_a: float = 0.01
    xi_b: float = 0.05
    coreset_const: float = 0.5
    noise_off: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 0.5:
            raise ValueError("gamma must be in (0,0.5)")
        if self.block_size < 1:
            raise ValueError("block size must be >= 1")
        if not self.noise_off:
            floor = (12.0 / self.epsilon) * math.log(2.0 * self.horizon / self.failure_prob)
            if self.block_size <= floor:
                raise ValueError(
                    f"block size M={self.block_size} must exceed "
                    f"(12/eps)*log(2T/xi)={floor:.4g}"
                )
        if not schedule_holds(self.gamma, self.sched_const):
            raise ValueError(
                f"schedule constant C={self.sched_const} too small for gamma={self.gamma}"
            )

    def level_gamma(self, level: int) -> float:
        return self.gamma / (self.sched_const * level * level)


def coreset_target_size(k: int, gamma: float, xi_b: float, coreset_const: float) -> int:
    logk = max(1.0, math.log2(max(k, 2)))
    return max(1, math.ceil(coreset_const * k * logk * gamma**-4 * math.log(1.0 / xi_b)))


def dp_semicoreset(
    points: np.ndarray,
    epsilon1: float,
    delta1: float,
    grid: ShiftedQuadtree,
    rng: np.random.Generator,
    z: int = 2,
    noise_off: bool = False,
) -> Semicoreset:
    """Private histogram summary of a raw block.

    Snaps each point to its unit (bottom-level) grid cell, adds Lap(1/eps1)
    to every occupied cell count, prunes cells below (2/eps1)*log(2/delta1),
    and emits the surviving cell centers with the noisy weights. Noise-off
    mode is the exact snapped histogram.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n == 0:
        raise ValueError("empty block")
    bottom = grid.max_level()
    length = grid.grid_lengths[bottom]
    shifted = pts + grid.shift[None, :] + grid.radius
    coords = np.floor(shifted / length).astype(np.int64)
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
    centers = (uniq + 0.5) * length - grid.shift[None, :] - grid.radius
    norms = np.linalg.norm(centers, axis=1)
    over = norms > grid.radius
    if np.any(over):
        centers[over] *= (grid.radius / norms[over])[:, None]

    if noise_off:
        weights = counts
        keep = weights > 0
    else:
        noise = rng.laplace(0.0, 1.0 / epsilon1, size=len(counts))
        weights = counts + noise
        prune = (2.0 / epsilon1) * math.log(2.0 / delta1)
        keep = weights >= prune

    centers = centers[keep]
    weights = weights[keep]
    d = pts.shape[1]
    snap_dist = math.sqrt(d) * length / 2.0
    if z == 2:
        kappa = 2.0
        snap_add = n * 2.0 * snap_dist**2
    else:
        kappa = 1.0
        snap_add = n * snap_dist
    if noise_off:
        weight_add = 0.0
    else:
        # coarse per-flush bound: noise + pruned mass, charged at ball scale
        pessimistic_noise = len(counts) * (prune + 2.0 / epsilon1)
        weight_add = pessimistic_noise * (2.0 * grid.radius) ** z
    return Semicoreset(centers, weights, kappa=kappa, eta1=0.0,
                       eta2=snap_add + weight_add, level=1)


def nondp_coreset(
    points: np.ndarray,
    weights: np.ndarray,
    k: int,
    z: int,
    gamma: float,
    xi_b: float,
    rng: np.random.Generator,
    coreset_const: float = 0.5,
) -> WeightedSet:
    """Sensitivity-sampling coreset; returns the input verbatim when small.

    Samples proportionally to per-point sensitivity upper bounds around a
    k-means++ bicriteria solution, reweights by inverse probability, and
    renormalizes so the total weight is preserved exactly.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float).reshape(-1)
    n = len(pts)
    if n == 0:
        return WeightedSet(pts, w)
    target = coreset_target_size(k, gamma, xi_b, coreset_const)
    if n <= target:
        return WeightedSet(pts.copy(), w.copy())

    seeds = approx_cluster(pts, w, k, z=z, seed=rng, lloyd_iters=0)
    diff = pts[:, None, :] - seeds[None, :, :]
    sq = np.einsum("nmd,nmd->nm", diff, diff)
    dist = sq if z == 2 else np.sqrt(sq)
    assign = np.argmin(dist, axis=1)
    dz = dist[np.arange(n), assign]
    total_cost = float(np.dot(w, dz))
    cluster_mass = np.bincount(assign, weights=w, minlength=k)
    if total_cost <= 0:
        sens = w.copy()
    else:
        sens = w * dz / total_cost + w / (k * cluster_mass[assign])
    probs = sens / sens.sum()
    picked = rng.choice(n, size=target, replace=True, p=probs)
    counts = np.bincount(picked, minlength=n)
    chosen = counts > 0
    out_w = w[chosen] * counts[chosen] / (target * probs[chosen])
    out_w *= w.sum() / out_w.sum()
    return WeightedSet(pts[chosen].copy(), out_w)


def clustering_to_semicoreset(
    centers: np.ndarray,
    points: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    z: int = 2,
    size_const: float = 1.0,
    noise_off: bool = False,
) -> Semicoreset:
    """Turn a private center set into a weighted summary via noisy counts.

    Each point is assigned to its nearest center; each cluster becomes its
    center weighted by a Lap(2/eps)-noised count (nonpositive weights drop
    the cluster). Requires |P| >= size_const * k * log|P| / eps.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    k = len(centers)
    floor = size_const * k * math.log(max(n, 2)) / epsilon
    if n < floor:
        raise InputTooSmallError(
            f"need at least {floor:.1f} points for k={k} at eps={epsilon}, got {n}"
        )
    diff = pts[:, None, :] - centers[None, :, :]
    sq = np.einsum("nmd,nmd->nm", diff, diff)
    assign = np.argmin(sq, axis=1)
    counts = np.bincount(assign, minlength=k).astype(float)
    if not noise_off:
        counts = counts + rng.laplace(0.0, 2.0 / epsilon, size=k)
    keep = counts > 0
    return Semicoreset(centers[keep].copy(), counts[keep], kappa=2.0 ** (z - 1),
                       eta1=1.0, eta2=0.0, level=1)


class MergeReducer:
    """One merge-and-reduce instance over a (sub)stream of points."""

    def __init__(
        self,
        config: MRConfig,
        grid: ShiftedQuadtree,
        rng: np.random.Generator,
        ledger: PrivacyLedger | None = None,
        instance_name: str = "mr-0",
    ):
        self.config = config
        self.grid = grid
        self._rng = rng
        self.ledger = ledger
        self.instance_name = instance_name
        self.gate = AboveThreshold(
            config.epsilon,
            config.block_size,
            config.horizon,
            config.failure_prob,
            rng,
            noise_off=config.noise_off,
        )
        self.buffer: list[np.ndarray] = []
        self.slots: dict[int, Semicoreset] = {}
        self.t = 0
        self.points_seen = 0
        self.flushes = 0
        self.max_level_used = 0
        self.peak_buffer = 0
        if ledger is not None:
            ledger.declare_group(("merge-reduce",), "parallel")
            ledger.declare_group(("merge-reduce", instance_name), "sequential")
            ledger.charge(("merge-reduce", instance_name, "size-gate"), eps=Fraction(1))
            ledger.declare_group(("merge-reduce", instance_name, "flushes"), "parallel")

    @property
    def buffer_size(self) -> int:
        return len(self.buffer)

    def level_count_bound(self) -> int:
        """Dyadic level bound u for the points seen so far."""
        n = max(self.points_seen, 1)
        return int(math.floor(math.log2(max(2.0 * n / self.config.block_size, 1.0)))) + 1

    def update(self, x: np.ndarray | None) -> Semicoreset | None:
        """Feed one element; None advances time only. Returns a release on flush."""
        if self.t >= self.config.horizon:
            raise HorizonExhaustedError("merge-reduce horizon exhausted")
        self.t += 1
        if x is None:
            return None
        self.buffer.append(np.asarray(x, dtype=float))
        self.points_seen += 1
        self.peak_buffer = max(self.peak_buffer, len(self.buffer))
        if self.gate.query(len(self.buffer)):
            self._flush()
            return self._release()
        return None

    def force_flush(self) -> Semicoreset | None:
        """Retire path: flush any buffered points and return the final state."""
        if self.buffer:
            self._flush()
            return self._release()
        if self.slots:
            return self._release()
        return None

    def _flush(self) -> None:
        cfg = self.config
        block = np.vstack(self.buffer)
        self.buffer.clear()
        summary = dp_semicoreset(
            block, cfg.epsilon1, cfg.delta1, self.grid, self._rng,
            z=cfg.z, noise_off=cfg.noise_off,
        )
        self.flushes += 1
        if self.ledger is not None:
            self.ledger.charge(
                ("merge-reduce", self.instance_name, "flushes", f"flush-{self.flushes}"),
                eps1=Fraction(1),
                delta1=Fraction(1),
            )
        level = 1
        while level in self.slots:
            other = self.slots.pop(level)
            kappa, eta1, eta2 = merge_certificates(summary, other)
            union = dedupe(
                np.vstack([summary.points, other.points]),
                np.concatenate([summary.weights, other.weights]),
            )
            g = cfg.level_gamma(level)
            reduced = nondp_coreset(
                union.points, union.weights, cfg.k, cfg.z, g, cfg.xi_b,
                self._rng, cfg.coreset_const,
            )
            kappa, eta1, eta2 = reduce_certificate(kappa, eta1, eta2, g)
            summary = Semicoreset(reduced.points, reduced.weights,
                                  kappa=kappa, eta1=eta1, eta2=eta2, level=level + 1)
            level += 1
        summary.level = level
        self.slots[level] = summary
        self.max_level_used = max(self.max_level_used, level)

    def _release(self) -> Semicoreset:
        cfg = self.config
        parts = [self.slots[lvl] for lvl in sorted(self.slots)]
        acc = parts[0]
        pts, w = acc.points, acc.weights
        kappa, eta1, eta2 = acc.kappa, acc.eta1, acc.eta2
        for part in parts[1:]:
            kappa, eta1, eta2 = merge_certificates(
                Semicoreset(pts, w, kappa, eta1, eta2), part
            )
            merged = dedupe(np.vstack([pts, part.points]),
                            np.concatenate([w, part.weights]))
            pts, w = merged.points, merged.weights
        g = cfg.gamma / 3.0
        reduced = nondp_coreset(pts, w, cfg.k, cfg.z, g, cfg.xi_b,
                                self._rng, cfg.coreset_const)
        kappa, eta1, eta2 = reduce_certificate(kappa, eta1, eta2, g)
        return Semicoreset(reduced.points, reduced.weights,
                           kappa=kappa, eta1=eta1, eta2=eta2,
                           level=max(self.slots))
