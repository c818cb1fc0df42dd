"""Epoch-managed streaming pipeline: bicriteria centers, ring routing,
per-ring merge-reduce instances, and the continually released union summary.

Every tick feeds the point to the bicriteria tracker first. If new centers
arrived, the current union summary is compacted, raw buffers are retired
through a final flush, and fresh per-ring instances open under the new
center snapshot. The point is then routed to the ring of its distance to
the frozen snapshot, all other rings receive an empty tick, and the release
is the compacted union of the per-ring outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._rng import child_rng
from .bicriteria import BicriteriaCenters, BicriteriaConfig
from .dp_primitives import HorizonExhaustedError, PrivacyLedger
from .geometry import approx_cluster, check_in_ball, dedupe
from .merge_reduce import (
    MergeReducer,
    MRConfig,
    Semicoreset,
    coreset_target_size,
    merge_certificates,
    nondp_coreset,
    reduce_certificate,
)
from .quadtree import ShiftedQuadtree, round_up_pow2


@dataclass
class PipelineConfig:
    k: int
    dim: int
    radius: float
    horizon: int
    epsilon: float = 1.0
    epsilon1: float = 0.0  # 0 -> same as epsilon
    delta1: float = 1e-6
    gamma: float = 0.2
    z: int = 2
    theta: float = 1.0 / 8.0
    gamma_h: float = 0.25
    block_size: int = 0  # 0 -> derived default
    cm: float = 100.0
    alpha_const: float = 1.0
    eta2_hint: float | None = None
    coreset_const: float = 0.5
    xi_b: float = 0.05
    xi_floor: float = 1e-9
    seed: int = 0
    noise_off: bool = False
    bucket_width: int = 0
    prune_const: float = 1000.0
    hh_admit_scale: float = 1.0
    strict_space_checks: bool = True

    def __post_init__(self):
        if self.z not in (1, 2):
            raise ValueError("z must be 1 or 2")
        if not 0 < self.gamma < 0.5:
            raise ValueError("gamma must be in (0,0.5)")
        if not 0 < self.theta < 1:
            raise ValueError("theta must be in (0,1)")
        if not 0 < self.gamma_h < 0.5:
            raise ValueError("gamma_h must be in (0,0.5)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.radius = float(round_up_pow2(self.radius))
        if self.epsilon1 <= 0:
            self.epsilon1 = self.epsilon
        self.log_radius = int(math.log2(self.radius))
        self.num_rings = self.log_radius + 1
        cap = BicriteriaConfig(
            epsilon=max(self.epsilon, 1e-12),
            k=self.k,
            radius=self.radius,
            dim=self.dim,
            horizon=self.horizon,
        ).center_cap
        xi = 1.0 / (3.0 * cap * max(1, self.log_radius) * self.horizon**2)
        self.xi = max(self.xi_floor, xi)
        if self.block_size <= 0:
            base = 1.1 * (12.0 / self.epsilon) * math.log(2.0 * self.horizon / self.xi)
            m = math.ceil(base)
            if self.eta2_hint is not None:
                alpha = self.alpha_const * self.dim**3
                m = max(m, math.ceil(alpha * self.eta2_hint / self.cm))
            self.block_size = m
        if not self.noise_off:
            floor = (12.0 / self.epsilon) * math.log(2.0 * self.horizon / self.xi)
            if self.block_size <= floor:
                raise ValueError(
                    f"block size M={self.block_size} must exceed "
                    f"(12/eps)*log(2T/xi)={floor:.4g}"
                )


def ring_of(x: np.ndarray, centers: np.ndarray, log_radius: int) -> int:
    """Ring index of x relative to the center snapshot.

    Distance D maps to r with 2^(r-1) <= D < 2^r; D < 1 maps to 0; an empty
    snapshot maps to the outermost ring log_radius; r is clamped there too.
    """
    if centers.size == 0:
        return log_radius
    diff = centers - np.asarray(x, dtype=float)[None, :]
    dist = float(np.sqrt(np.einsum("md,md->m", diff, diff).min()))
    if dist < 1.0:
        return 0
    return min(int(math.floor(math.log2(dist))) + 1, log_radius)


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.ledger = PrivacyLedger()
        self.t = 0
        self.epoch = 0
        bcfg = BicriteriaConfig(
            epsilon=config.epsilon,
            k=config.k,
            radius=config.radius,
            dim=config.dim,
            horizon=config.horizon,
            width=config.bucket_width,
            theta=config.theta,
            gamma_h=config.gamma_h,
            prune_const=config.prune_const,
            hh_admit_scale=config.hh_admit_scale,
            noise_off=config.noise_off,
        )
        self.bicriteria = BicriteriaCenters(bcfg, config.seed, self.ledger)
        self.snap_grid = ShiftedQuadtree(
            config.radius, config.dim, child_rng(config.seed, "snap-grid")
        )
        self._mr_config = MRConfig(
            block_size=config.block_size,
            gamma=config.gamma,
            epsilon=config.epsilon,
            epsilon1=config.epsilon1,
            delta1=config.delta1,
            horizon=config.horizon,
            k=config.k,
            dim=config.dim,
            z=config.z,
            failure_prob=config.xi,
            xi_b=config.xi_b,
            coreset_const=config.coreset_const,
            noise_off=config.noise_off,
        )
        self.center_snapshot = np.empty((0, config.dim))
        self.instances: list[MergeReducer] = []
        self._open_epoch_instances()
        self.prior: Semicoreset | None = None
        self.contributions: dict[int, Semicoreset] = {}
        self._release_cache: Semicoreset = Semicoreset(
            np.empty((0, config.dim)), np.empty(0)
        )
        self.peak_raw_points = 0
        self.release_size_bound = coreset_target_size(
            config.k, config.gamma, config.xi_b, config.coreset_const
        )

    def _open_epoch_instances(self) -> None:
        cfg = self.config
        self.instances = [
            MergeReducer(
                self._mr_config,
                self.snap_grid,
                child_rng(cfg.seed, "mr", self.epoch, ring),
                ledger=self.ledger,
                instance_name=f"epoch{self.epoch}-ring{ring}",
            )
            for ring in range(cfg.num_rings)
        ]

    # -- per-tick state -------------------------------------------------------

    def live_raw_points(self) -> int:
        return sum(inst.buffer_size for inst in self.instances)

    def raw_point_bound(self) -> float:
        return self.config.num_rings * 1.5 * self.config.block_size

    def _compact(self, parts: list[Semicoreset]) -> Semicoreset:
        cfg = self.config
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            return Semicoreset(np.empty((0, cfg.dim)), np.empty(0))
        acc = parts[0]
        pts, w = acc.points, acc.weights
        kappa, eta1, eta2 = acc.kappa, acc.eta1, acc.eta2
        for part in parts[1:]:
            kappa, eta1, eta2 = merge_certificates(
                Semicoreset(pts, w, kappa, eta1, eta2), part
            )
            merged = dedupe(
                np.vstack([pts, part.points]), np.concatenate([w, part.weights])
            )
            pts, w = merged.points, merged.weights
        reduced = nondp_coreset(
            pts, w, cfg.k, cfg.z, cfg.gamma, cfg.xi_b,
            child_rng(cfg.seed, "compact", self.t, self.epoch), cfg.coreset_const,
        )
        kappa, eta1, eta2 = reduce_certificate(kappa, eta1, eta2, cfg.gamma)
        out = Semicoreset(reduced.points, reduced.weights, kappa, eta1, eta2)
        if len(out) > self.release_size_bound:
            raise AssertionError(
                f"release size {len(out)} exceeds bound {self.release_size_bound}"
            )
        return out

    def _parts(self) -> list[Semicoreset]:
        parts = [] if self.prior is None else [self.prior]
        parts.extend(self.contributions[r] for r in sorted(self.contributions))
        return parts

    def update(self, x: np.ndarray) -> Semicoreset:
        """Process one stream point and return the current released summary."""
        cfg = self.config
        if self.t >= cfg.horizon:
            raise HorizonExhaustedError("pipeline horizon exhausted")
        x = np.asarray(x, dtype=float)
        check_in_ball(x, cfg.radius)
        self.t += 1

        new_centers = self.bicriteria.update(x)
        grew = len(new_centers) > 0
        assert grew == (len(self.bicriteria.solution) > len(self.center_snapshot))
        dirty = False
        if grew:
            for ring, inst in enumerate(self.instances):
                final = inst.force_flush()
                if final is not None:
                    self.contributions[ring] = final
            self.prior = self._compact(self._parts())
            self.contributions = {}
            self.epoch += 1
            self._open_epoch_instances()
            self.center_snapshot = self.bicriteria.solution.centers_array().copy()
            dirty = True

        ring = ring_of(x, self.center_snapshot, cfg.log_radius)
        if ring >= 1 and self.center_snapshot.size:
            diff = self.center_snapshot - x[None, :]
            dist = math.sqrt(float(np.einsum("md,md->m", diff, diff).min()))
            assert (2.0**ring) ** cfg.z <= (2.0 * dist) ** cfg.z * (1 + 1e-9)
        for r, inst in enumerate(self.instances):
            out = inst.update(x if r == ring else None)
            if out is not None:
                self.contributions[r] = out
                dirty = True

        raw = self.live_raw_points()
        self.peak_raw_points = max(self.peak_raw_points, raw)
        if cfg.strict_space_checks and raw > self.raw_point_bound():
            raise AssertionError(
                f"live raw points {raw} exceed bound {self.raw_point_bound():.0f}"
            )

        if dirty:
            self._release_cache = self._compact(self._parts())
        return self._release_cache

    def release(self) -> Semicoreset:
        return self._release_cache

    def budget_multipliers(self) -> dict:
        return self.ledger.totals()

    def budget_spend(self) -> dict:
        return self.ledger.total_spend(
            {
                "eps": self.config.epsilon,
                "eps1": self.config.epsilon1,
                "delta1": self.config.delta1,
            }
        )

    def check_budget_closed(self) -> bool:
        """Ledger must close at 2*eps + eps1 (and delta1) no matter the run."""
        totals = self.budget_multipliers()
        if totals.get("eps", 0) != Fraction(2):
            return False
        if "eps1" in totals:  # present once any flush has run
            if totals["eps1"] != Fraction(1):
                return False
            if totals.get("delta1", Fraction(0)) != Fraction(1):
                return False
        return True


def finalize_centers(
    summary: Semicoreset | None,
    k: int,
    z: int = 2,
    seed: int | np.random.Generator = 0,
    lloyd_iters: int = 20,
) -> np.ndarray:
    """Post-process a released summary into exactly k centers (no budget)."""
    if summary is None or len(summary) == 0:
        raise ValueError("no released data to cluster")
    return approx_cluster(
        summary.points, summary.weights, k, z=z, seed=seed, lloyd_iters=lloyd_iters
    )
