"""Continual-release DP heavy-hitter tracker over a stream of cell ids.

The tracker keeps a capacity-bounded candidate table (capacity ~ 4/theta).
Each admitted candidate gets its own binary-mechanism counter, created at
admission, that counts the candidate's occurrences from that point on, so
estimates are unbiased counts-since-admission. Eviction ranks candidates by
the running max of their noisy estimates (monotone, so one low draw cannot
evict an established candidate), preferring to evict the youngest among
ties, then the smaller cell id. All decisions read noisy releases only; raw counts stay inside the
mechanisms and reads of them are audited.

A candidate is reported once its estimate clears both the admission
threshold (a noise floor, 1 in noise-off mode) and theta times the noisy
substream length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dp_primitives import BinaryMechanism, HorizonExhaustedError


@dataclass
class HHConfig:
    epsilon: float
    theta: float
    gamma_h: float
    horizon: int
    universe_bits: int
    failure_prob: float = 0.05
    admit_scale: float = 1.0
    cap_const: float = 4.0
    noise_off: bool = False

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must be in (0,1)")
        if not 0 < self.gamma_h < 0.5:
            raise ValueError("gamma_h must be in (0,0.5)")
        if not 0 < self.failure_prob < 0.5:
            raise ValueError("failure_prob must be in (0,0.5)")
        if not self.noise_off and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def capacity(self) -> int:
        return max(1, math.ceil(4.0 / self.theta))

    @property
    def admission_threshold(self) -> float:
        """Noise floor for report membership; 1 when noise is off."""
        if self.noise_off:
            return 1.0
        log_term = math.log(
            self.horizon * (2.0**self.universe_bits) / self.failure_prob
        )
        return self.admit_scale * (1.0 / (self.epsilon * self.gamma_h)) * log_term**2

    @property
    def report_cap(self) -> int:
        log_term = math.log(self.horizon / self.failure_prob) + self.universe_bits * math.log(2)
        ratio = (1.0 + self.gamma_h) / (1.0 - self.gamma_h)
        return max(1, math.ceil(self.cap_const * log_term * ratio / self.theta))


@dataclass
class HHReport:
    members: set = field(default_factory=set)
    estimates: dict = field(default_factory=dict)


class _Candidate:
    __slots__ = ("item", "counter", "admitted_at", "rank_max")

    def __init__(self, item: int, counter: BinaryMechanism, tick: int):
        self.item = item
        self.counter = counter
        self.admitted_at = tick
        # running max of noisy estimates: one low draw cannot evict an
        # established candidate, and in noise-off mode it equals the count
        self.rank_max = 0.0


class HeavyHitterSketch:
    def __init__(self, config: HHConfig, rng: np.random.Generator):
        self.config = config
        # internal split of the instance budget: the substream length counter
        # gets eps/2 and each candidate counter eps/2 (one stream element
        # touches the length counter and at most one candidate counter)
        eps = config.epsilon
        self._slot_eps = max(eps * 0.5, 1e-12)
        self._length = BinaryMechanism(
            config.horizon, max(eps * 0.5, 1e-12), rng, noise_off=config.noise_off
        )
        self._rng = rng
        self._table: dict[int, _Candidate] = {}
        self._historical: set[int] = set()
        self.updates = 0
        self._retired_raw_reads = 0
        # deterministic bound on plausible estimate noise, used to skip
        # report work while the admission threshold is unreachable
        levels = max(1, math.ceil(math.log2(config.horizon))) + 1
        self._noise_slack = 0.0 if config.noise_off else (
            60.0 * (levels / self._slot_eps) * levels
        )
        self._never_reports = (
            config.admission_threshold > config.horizon + self._noise_slack
        )

    # -- internal noisy views --------------------------------------------------

    def _estimate(self, cand: _Candidate) -> float:
        return cand.counter.release()

    def _length_estimate(self) -> float:
        return max(0.0, self._length.release())

    def _bar(self) -> float:
        return max(self.config.admission_threshold, self.config.theta * self._length_estimate())

    # -- stream interface -------------------------------------------------------

    def _ingest(self, item: int | None) -> _Candidate | None:
        """Advance clocks; admit/evict as needed. Returns the item's entry."""
        if self.updates >= self.config.horizon:
            raise HorizonExhaustedError("heavy-hitter horizon exhausted")
        self.updates += 1
        if item is None:
            self._length.add(0)
            return None
        self._length.add(1)
        cand = self._table.get(item)
        if cand is None:
            cand = self._admit(item)
        cand.counter.add(1)
        if not self._never_reports:
            cand.rank_max = max(cand.rank_max, self._estimate(cand))
        return cand

    def _new_counter(self) -> BinaryMechanism:
        return BinaryMechanism(
            self.config.horizon, self._slot_eps, self._rng,
            noise_off=self.config.noise_off,
        )

    def _admit(self, item: int) -> _Candidate:
        if len(self._table) < self.config.capacity:
            cand = _Candidate(item, self._new_counter(), self.updates)
            self._table[item] = cand
            return cand
        # evict the smallest running-max estimate; among ties prefer the
        # youngest candidate, then the smaller cell id
        victim: _Candidate | None = None
        victim_rank: tuple = (math.inf, 0, 0)
        for cand in self._table.values():
            rank = (cand.rank_max, -cand.admitted_at, cand.item)
            if rank < victim_rank:
                victim, victim_rank = cand, rank
        assert victim is not None
        self._retired_raw_reads += victim.counter.raw_reads
        del self._table[victim.item]
        fresh = _Candidate(item, self._new_counter(), self.updates)
        self._table[item] = fresh
        return fresh

    def update(self, item: int | None) -> HHReport:
        """Process one stream element (None advances time) and report."""
        self._ingest(item)
        return self.report()

    def update_fast(self, item: int | None) -> tuple[int, float] | None:
        """Cheap update path: returns (item, estimate) iff the updated item
        currently clears the report bar; skips report construction."""
        cand = self._ingest(item)
        if cand is None:
            return None
        if self.config.admission_threshold > self.updates + self._noise_slack:
            return None  # no count can reach the floor yet
        est = self._estimate(cand)
        if est >= self._bar() and est > 0:
            self._historical.add(cand.item)
            return (cand.item, est)
        return None

    def observe(self, item: int | None) -> None:
        """Ingest without producing a report (callers that poll report())."""
        self._ingest(item)

    def report(self) -> HHReport:
        """Current heavy-hitter set and estimates, capped at report_cap."""
        rep = HHReport()
        if self.config.admission_threshold > self.updates + self._noise_slack:
            return rep
        bar = self._bar()
        entries = []
        for item, cand in self._table.items():
            est = self._estimate(cand)
            if est >= bar and est > 0:
                entries.append((item, est))
        entries.sort(key=lambda e: (-e[1], e[0]))
        for item, est in entries[: self.config.report_cap]:
            rep.members.add(item)
            rep.estimates[item] = est
            self._historical.add(item)
        return rep

    def historical(self) -> frozenset:
        """Union of every cell ever reported; monotone over time."""
        return frozenset(self._historical)

    @property
    def raw_access_count(self) -> int:
        live = sum(c.counter.raw_reads for c in self._table.values())
        return live + self._retired_raw_reads + self._length.raw_reads
