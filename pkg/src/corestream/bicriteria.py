"""Continual-release DP bicriteria center discovery.

A lattice of (quadtree level, tree, repetition) sub-instances hashes each
point's cell into buckets; per-bucket size counters and heavy-hitter
sketches decide which cells are dense enough that their centerpoints join
the append-only candidate center set. The per-sub-instance privacy budget
is epsilon / (4 * levels * trees^2), which makes the whole subtree close at
exactly epsilon (half to the sketches, half to the counters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._rng import child_rng
from .dp_primitives import CounterArray, HorizonExhaustedError, PrivacyLedger
from .geometry import check_in_ball
from .heavy_hitters import HHConfig, HeavyHitterSketch
from .quadtree import Cell, ShiftedQuadtree, round_up_pow2

_HASH_PRIME = (1 << 61) - 1


def bucket_hash(packed_cell: int, width: int, a: int, b: int) -> int:
    """2-universal bucket assignment: ((a*x + b) mod p) mod width."""
    return int(((a * (packed_cell % _HASH_PRIME) + b) % _HASH_PRIME) % width)


@dataclass
class BicriteriaConfig:
    epsilon: float
    k: int
    radius: float
    dim: int
    horizon: int
    width: int = 0  # 0 -> 40 * k
    theta: float = 1.0 / 8.0
    gamma_h: float = 0.25
    prune_const: float = 1000.0
    cap_const: float = 8.0
    hh_admit_scale: float = 1.0
    noise_off: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        self.radius = float(round_up_pow2(self.radius))
        if self.width <= 0:
            self.width = 40 * self.k
        self.n_trees = max(1, math.ceil(math.log2(self.k)))
        self.n_reps = 2 * self.n_trees
        self.n_levels = int(math.log2(self.radius))  # lattice levels 1..n_levels
        denom = 4 * max(1, self.n_levels) * self.n_trees * self.n_trees
        self.eps_prime = self.epsilon / denom
        self.eps_fraction = Fraction(1, denom)
        self.mech_failure = 1.0 / max(self.k, 2) ** 2

    @property
    def touches_per_update(self) -> int:
        """Sketch updates (= counter updates) one point participates in."""
        return self.n_levels * self.n_trees * self.n_reps

    @property
    def center_cap(self) -> int:
        logk = max(1, self.n_trees)
        log_t = max(1, math.ceil(math.log2(max(2, self.horizon))))
        return math.ceil(
            self.cap_const * self.k * logk * logk * max(1, self.n_levels) * log_t
        )


@dataclass
class BicriteriaSolution:
    """Append-only weighted center list; growth events delimit epochs."""

    points: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    births: list = field(default_factory=list)
    _index: dict = field(default_factory=dict)
    _array: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)

    def add(self, key: tuple, point: np.ndarray, weight: float, birth: int) -> bool:
        """Insert if new; otherwise keep the max weight. Returns True if new."""
        pos = self._index.get(key)
        if pos is not None:
            if weight > self.weights[pos]:
                self.weights[pos] = weight
            return False
        self._index[key] = len(self.points)
        self.points.append(np.asarray(point, dtype=float))
        self.weights.append(float(weight))
        self.births.append(int(birth))
        self._array = None
        return True

    def centers_array(self) -> np.ndarray:
        if self._array is None:
            if not self.points:
                self._array = np.empty((0, 0))
            else:
                self._array = np.vstack(self.points)
        return self._array


class _LatticeCell:
    """One (level, tree, rep) sub-instance: hash + counters + sketches."""

    __slots__ = ("level", "tree_idx", "rep", "hash_a", "hash_b", "counters",
                 "sketches", "universe_bits", "rng")

    def __init__(self, level, tree_idx, rep, cfg: BicriteriaConfig, rng, seed_root):
        self.level = level
        self.tree_idx = tree_idx
        self.rep = rep
        self.rng = rng
        self.hash_a = int(rng.integers(1, _HASH_PRIME))
        self.hash_b = int(rng.integers(0, _HASH_PRIME))
        self.counters = CounterArray(
            cfg.width, cfg.horizon, cfg.eps_prime, rng, cfg.noise_off
        )
        self.sketches: dict[int, HeavyHitterSketch] = {}
        self.universe_bits = cfg.dim * (level + 2)


class BicriteriaCenters:
    def __init__(
        self,
        config: BicriteriaConfig,
        seed: int,
        ledger: PrivacyLedger | None = None,
    ):
        self.config = config
        self.seed = seed
        self.solution = BicriteriaSolution()
        self.t = 0
        self.trees = [
            ShiftedQuadtree(config.radius, config.dim, child_rng(seed, "tree", q), index=q)
            for q in range(config.n_trees)
        ]
        self.cells: dict[tuple, _LatticeCell] = {}
        self.ledger = ledger
        if ledger is not None:
            ledger.declare_group(("bicriteria",), "sequential")
        for lvl in range(1, config.n_levels + 1):
            for q in range(config.n_trees):
                for p in range(config.n_reps):
                    rng = child_rng(seed, "lattice", lvl, q, p)
                    self.cells[(lvl, q, p)] = _LatticeCell(lvl, q, p, config, rng, seed)
                    if ledger is not None:
                        name = f"cell-{lvl}-{q}-{p}"
                        ledger.declare_group(("bicriteria", name), "sequential")
                        ledger.charge(
                            ("bicriteria", name, "bucket-counters"),
                            eps=config.eps_fraction,
                        )
                        ledger.charge(
                            ("bicriteria", name, "bucket-sketches"),
                            eps=config.eps_fraction,
                        )

    def _sketch_for(self, cell: _LatticeCell, bucket: int) -> HeavyHitterSketch:
        sk = cell.sketches.get(bucket)
        if sk is None:
            cfg = self.config
            hh_cfg = HHConfig(
                epsilon=cfg.eps_prime,
                theta=cfg.theta,
                gamma_h=cfg.gamma_h,
                horizon=cfg.horizon,
                universe_bits=cell.universe_bits,
                failure_prob=cfg.mech_failure,
                admit_scale=cfg.hh_admit_scale,
                noise_off=cfg.noise_off,
            )
            sk = HeavyHitterSketch(
                hh_cfg,
                child_rng(self.seed, "hh", cell.level, cell.tree_idx, cell.rep, bucket),
            )
            cell.sketches[bucket] = sk
        return sk

    def update(self, x: np.ndarray) -> list[tuple[np.ndarray, float]]:
        """Feed one point through the lattice; returns newly added centers."""
        cfg = self.config
        if self.t >= cfg.horizon:
            raise HorizonExhaustedError("bicriteria horizon exhausted")
        x = np.asarray(x, dtype=float)
        check_in_ball(x, cfg.radius)
        self.t += 1
        new_centers: list[tuple[np.ndarray, float]] = []
        prune_frac = cfg.theta / cfg.prune_const
        for q, tree in enumerate(self.trees):
            coords_all = tree.cell_coords(x)
            for lvl in range(1, cfg.n_levels + 1):
                bits = lvl + 2
                packed = 0
                for c in coords_all[lvl]:
                    packed = (packed << bits) | int(c)
                for p in range(cfg.n_reps):
                    cell = self.cells[(lvl, q, p)]
                    bucket = bucket_hash(packed, cfg.width, cell.hash_a, cell.hash_b)
                    cell.counters.tick(bucket)
                    sketch = self._sketch_for(cell, bucket)
                    hit = sketch.update_fast(packed)
                    if hit is None:
                        continue
                    _, estimate = hit
                    bucket_size = cell.counters.release(bucket)
                    if estimate < prune_frac * bucket_size:
                        continue
                    key = (q, lvl, packed)
                    center = tree.centerpoint(
                        Cell(q, lvl, tuple(int(c) for c in coords_all[lvl]))
                    )
                    if self.solution.add(key, center, estimate, self.t):
                        new_centers.append((center, estimate))
        if len(self.solution) > cfg.center_cap:
            raise AssertionError(
                f"|F|={len(self.solution)} exceeded cap {cfg.center_cap}"
            )
        return new_centers
