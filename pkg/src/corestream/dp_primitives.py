"""Calibrated noise primitives for continual release.

Three mechanisms live here:

* a Laplace sampler with a first-class noise-off mode,
* a dyadic-tree counter that releases a noisy prefix sum at every update
  (per-node noise is sampled lazily, once per node, and reused),
* a sparse-vector threshold test over a growing buffer size.

Plus the privacy ledger: a composition tree whose sequential nodes sum and
parallel nodes take the max, with exact Fraction multipliers per budget coin
so totals can be checked exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class HorizonExhaustedError(RuntimeError):
    """An update arrived after the configured stream horizon."""


def sample_laplace(scale: float, rng: np.random.Generator) -> float:
    """One draw from the centered Laplace distribution.

    scale = inf is the noise-off debug representation and draws exactly 0.
    """
    if scale == math.inf:
        return 0.0
    if scale <= 0:
        raise ValueError("Laplace scale must be positive")
    return float(rng.laplace(0.0, scale))


class BinaryMechanism:
    """Continual-release counter over a dyadic interval tree.

    Every update advances the clock and returns the exact prefix sum plus
    the noise of the <= ceil(log2 T)+1 dyadic nodes covering [1, t]. Node
    noise has scale (ceil(log2 T)+1)/epsilon, is sampled at most once per
    node, and is reused by later releases that touch the same node.

    `add` / `release` are split out so sparse callers can advance the clock
    in O(1) and only pay for noise when a release is actually consumed.
    """

    def __init__(
        self,
        horizon: int,
        epsilon: float,
        rng: np.random.Generator | None = None,
        noise_off: bool = False,
        ledger: "PrivacyLedger | None" = None,
        ledger_path: tuple = (),
        eps_multiplier: Fraction = Fraction(1),
    ):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if not noise_off and epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.horizon = int(horizon)
        self.epsilon = float(epsilon)
        self.noise_off = bool(noise_off)
        self.levels = max(1, math.ceil(math.log2(self.horizon))) + 1
        self.node_scale = math.inf if noise_off else self.levels / epsilon
        self.t = 0
        self._exact = 0.0
        self._node_noise: dict[int, float] = {}
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.raw_reads = 0
        if ledger is not None:
            ledger.charge(ledger_path, eps=eps_multiplier)

    def add(self, increment: float) -> None:
        if self.t >= self.horizon:
            raise HorizonExhaustedError(f"horizon {self.horizon} exhausted")
        if increment < 0:
            raise ValueError("increments must be nonnegative")
        self.t += 1
        self._exact += increment

    def _noise_at(self, t: int) -> float:
        if self.noise_off or t == 0:
            return 0.0
        total = 0.0
        idx = t
        while idx > 0:
            noise = self._node_noise.get(idx)
            if noise is None:
                noise = float(self._rng.laplace(0.0, self.node_scale))
                self._node_noise[idx] = noise
            total += noise
            idx -= idx & -idx
        return total

    def release(self) -> float:
        """Noisy prefix sum at the current clock."""
        return self._exact + self._noise_at(self.t)

    def update(self, increment: float) -> float:
        """Advance the clock by one increment and release."""
        self.add(increment)
        return self.release()

    def peek_exact(self) -> float:
        """Raw prefix sum; test/debug accessor, audited."""
        self.raw_reads += 1
        return self._exact


class CounterArray:
    """w binary-mechanism counters sharing one clock and one rng.

    Equivalent to w independent BinaryMechanism instances that each receive
    an increment every tick (1 for one bucket, 0 for the rest), realized in
    O(1) per tick. Noise caches are per bucket, keyed by dyadic node.
    """

    def __init__(
        self,
        width: int,
        horizon: int,
        epsilon: float,
        rng: np.random.Generator,
        noise_off: bool = False,
    ):
        self.width = int(width)
        self.horizon = int(horizon)
        self.epsilon = float(epsilon)
        self.noise_off = bool(noise_off)
        self.levels = max(1, math.ceil(math.log2(self.horizon))) + 1
        self.node_scale = math.inf if noise_off else self.levels / epsilon
        self.t = 0
        self._exact = np.zeros(self.width, dtype=np.int64)
        self._node_noise: dict[int, dict[int, float]] = {}
        self._rng = rng
        self.raw_reads = 0

    def tick(self, bucket: int | None) -> None:
        """Advance all counters by one step; `bucket` gets increment 1."""
        if self.t >= self.horizon:
            raise HorizonExhaustedError(f"horizon {self.horizon} exhausted")
        self.t += 1
        if bucket is not None:
            self._exact[bucket] += 1

    def release(self, bucket: int) -> float:
        if self.noise_off:
            return float(self._exact[bucket])
        cache = self._node_noise.setdefault(bucket, {})
        total = 0.0
        idx = self.t
        while idx > 0:
            noise = cache.get(idx)
            if noise is None:
                noise = float(self._rng.laplace(0.0, self.node_scale))
                cache[idx] = noise
            total += noise
            idx -= idx & -idx
        return float(self._exact[bucket]) + total

    def peek_exact(self, bucket: int) -> int:
        self.raw_reads += 1
        return int(self._exact[bucket])


TOP = True
BOT = False


class AboveThreshold:
    """Sparse-vector test: does the level-0 buffer size exceed a noisy bar?

    The threshold noise Lap(2/eps) is drawn at construction and re-drawn
    after every TOP answer (a fresh group starts); the query noise Lap(4/eps)
    is drawn per call. Noise-off mode answers p0 >= M exactly.
    """

    def __init__(
        self,
        epsilon: float,
        threshold: float,
        horizon: int,
        failure_prob: float = 0.05,
        rng: np.random.Generator | None = None,
        noise_off: bool = False,
    ):
        if not noise_off:
            if epsilon <= 0:
                raise ValueError("epsilon must be positive")
            floor = (12.0 / epsilon) * math.log(2.0 * horizon / failure_prob)
            if threshold <= floor:
                raise ValueError(
                    f"threshold M={threshold:.6g} must exceed "
                    f"(12/eps)*log(2T/xi)={floor:.6g}"
                )
        self.epsilon = float(epsilon)
        self.threshold = float(threshold)
        self.horizon = int(horizon)
        self.noise_off = bool(noise_off)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._resample_threshold()

    def _resample_threshold(self) -> None:
        if self.noise_off:
            self.noisy_threshold = self.threshold
        else:
            self.noisy_threshold = self.threshold + float(
                self._rng.laplace(0.0, 2.0 / self.epsilon)
            )

    def query(self, p0: int) -> bool:
        """TOP iff p0 + Lap(4/eps) >= noisy threshold; TOP resamples it."""
        if self.noise_off:
            nu = 0.0
        else:
            nu = float(self._rng.laplace(0.0, 4.0 / self.epsilon))
        if p0 + nu >= self.noisy_threshold:
            self._resample_threshold()
            return TOP
        return BOT


@dataclass
class _LedgerNode:
    kind: str  # "sequential" | "parallel" | "leaf"
    children: dict = None  # type: ignore[assignment]
    budget: dict = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.children is None:
            self.children = {}
        if self.budget is None:
            self.budget = {}


class PrivacyLedger:
    """Composition tree of privacy charges.

    A charge names a leaf by path; interior nodes are declared sequential
    (budgets add) or parallel (budgets max, for mechanisms on disjoint
    data). Budgets are dicts coin -> Fraction multiplier, e.g.
    {"eps": Fraction(1, 56)}; totals stay exact rationals. Charging the same
    leaf twice trips an assertion.
    """

    def __init__(self):
        self.root = _LedgerNode("sequential")
        self._groups: dict[tuple, str] = {(): "sequential"}

    def declare_group(self, path: tuple, kind: str) -> None:
        if kind not in ("sequential", "parallel"):
            raise ValueError("group kind must be sequential or parallel")
        existing = self._groups.get(path)
        if existing is not None and existing != kind:
            raise ValueError(f"group {path} already declared {existing}")
        self._groups[path] = kind

    def charge(self, path: tuple, **coins: Fraction) -> None:
        """Charge a leaf at `path` with Fraction multipliers per coin."""
        node = self.root
        for i, part in enumerate(path[:-1]):
            prefix = path[: i + 1]
            kind = self._groups.get(prefix, "sequential")
            child = node.children.get(part)
            if child is None:
                child = _LedgerNode(kind)
                node.children[part] = child
            elif child.kind != kind:
                raise ValueError(f"group {prefix} kind mismatch")
            node = child
        leaf_name = path[-1]
        if leaf_name in node.children:
            raise AssertionError(f"mechanism {path} registered twice")
        budget = {k: Fraction(v) for k, v in coins.items()}
        node.children[leaf_name] = _LedgerNode("leaf", budget=budget)

    def _fold(self, node: _LedgerNode) -> dict:
        if node.kind == "leaf":
            return dict(node.budget)
        totals: dict = {}
        for child in node.children.values():
            sub = self._fold(child)
            for coin, value in sub.items():
                if node.kind == "sequential":
                    totals[coin] = totals.get(coin, Fraction(0)) + value
                else:
                    totals[coin] = max(totals.get(coin, Fraction(0)), value)
        return totals

    def totals(self, path: tuple = ()) -> dict:
        """Exact Fraction multipliers per coin under `path`."""
        node = self.root
        for part in path:
            node = node.children[part]
        return self._fold(node)

    def total_spend(self, values: dict, path: tuple = ()) -> dict:
        """Numeric spend given base values, e.g. {"eps": 1.0, "eps1": 1.0}."""
        return {
            coin: float(mult) * values.get(coin, 0.0)
            for coin, mult in self.totals(path).items()
        }
