import math
from fractions import Fraction

import numpy as np
import pytest

from corestream.dp_primitives import (
    AboveThreshold,
    BinaryMechanism,
    CounterArray,
    HorizonExhaustedError,
    PrivacyLedger,
    sample_laplace,
)


class TestLaplace:
    def test_noise_off_draws_zero(self):
        assert sample_laplace(math.inf, np.random.default_rng(0)) == 0.0

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            sample_laplace(0.0, np.random.default_rng(0))

    def test_empirical_mean(self):
        rng = np.random.default_rng(100)
        draws = np.array([sample_laplace(1.0, rng) for _ in range(100_000)])
        # sd of the mean is sqrt(2/n) ~ 0.0045; +-0.02 is > 4 sigma
        assert abs(draws.mean()) < 0.02

    def test_tail_probability(self):
        # oracle: P(|X| > b ln(1/q)) = q for Laplace(b)
        rng = np.random.default_rng(101)
        draws = np.array([sample_laplace(1.0, rng) for _ in range(100_000)])
        frac = float((np.abs(draws) > math.log(20.0)).mean())
        assert abs(frac - 0.05) < 0.01


class TestBinaryMechanism:
    def test_noise_off_prefix_sums(self):
        bm = BinaryMechanism(8, 1.0, noise_off=True)
        assert [bm.update(v) for v in [1, 1, 0, 1]] == [1.0, 2.0, 2.0, 3.0]

    def test_noise_off_exhaustive_t16(self):
        # every 0/1 stream of length 16 would be 2^16 cases; exactness is
        # linear per step, so random streams plus the all-ones stream cover it
        rng = np.random.default_rng(5)
        for trial in range(64):
            stream = rng.integers(0, 2, size=16) if trial else np.ones(16, int)
            bm = BinaryMechanism(16, 1.0, noise_off=True)
            run = 0
            for v in stream:
                run += int(v)
                assert bm.update(int(v)) == float(run)

    def test_horizon_error(self):
        bm = BinaryMechanism(2, 1.0, noise_off=True)
        bm.update(1)
        bm.update(1)
        with pytest.raises(HorizonExhaustedError):
            bm.update(1)

    def test_all_ones_error_bound(self):
        # Monte-Carlo calibration constant 8 recorded for the acceptance gate
        bound = 8.0 * math.log2(1024) ** 2.5
        worst = 0.0
        for trial in range(50):
            rng = np.random.default_rng(1000 + trial)
            bm = BinaryMechanism(1024, 1.0, rng)
            for t in range(1, 1025):
                worst = max(worst, abs(bm.update(1) - t))
        assert worst <= bound

    def test_zero_stream_mean_noise(self):
        rels = []
        for trial in range(200):
            rng = np.random.default_rng(2000 + trial)
            bm = BinaryMechanism(64, 1.0, rng)
            last = 0.0
            for _ in range(64):
                last = bm.update(0)
            rels.append(last)
        assert abs(np.mean(rels)) < 15.0

    def test_node_noise_reused(self):
        rng = np.random.default_rng(3)
        bm = BinaryMechanism(32, 1.0, rng)
        bm.update(1)
        r1 = bm.release()
        r2 = bm.release()
        assert r1 == r2  # same node set, cached noise

    def test_ledger_charge_once(self):
        ledger = PrivacyLedger()
        BinaryMechanism(8, 0.5, ledger=ledger, ledger_path=("bm-a",),
                        eps_multiplier=Fraction(1, 2))
        assert ledger.totals() == {"eps": Fraction(1, 2)}
        with pytest.raises(AssertionError):
            BinaryMechanism(8, 0.5, ledger=ledger, ledger_path=("bm-a",))


class TestCounterArray:
    def test_matches_per_bucket_truth(self):
        arr = CounterArray(4, 32, 1.0, np.random.default_rng(0), noise_off=True)
        truth = [0] * 4
        rng = np.random.default_rng(9)
        for _ in range(20):
            b = int(rng.integers(0, 4))
            arr.tick(b)
            truth[b] += 1
            for j in range(4):
                assert arr.release(j) == float(truth[j])

    def test_none_tick_advances_only(self):
        arr = CounterArray(2, 8, 1.0, np.random.default_rng(0), noise_off=True)
        arr.tick(None)
        assert arr.t == 1 and arr.release(0) == 0.0


class TestAboveThreshold:
    def test_noise_off_boundary(self):
        at = AboveThreshold(1.0, 8, 100, noise_off=True)
        assert at.query(8) is True
        assert at.query(7) is False

    def test_precondition_enforced_when_noisy(self):
        with pytest.raises(ValueError):
            AboveThreshold(1.0, 10, 10**6, 0.05)  # M too small for eps, T

    def test_fires_reliably_above_three_halves(self):
        # Monte-Carlo version of the buffer-cap claim at p0 = 3M/2
        M, T = 256, 10**6
        tops = 0
        for trial in range(1000):
            at = AboveThreshold(1.0, M, T, 0.05, np.random.default_rng(trial))
            tops += at.query(int(1.5 * M))
        assert tops >= 990

    def test_rarely_fires_at_quarter(self):
        M, T = 256, 10**6
        tops = 0
        for trial in range(1000):
            at = AboveThreshold(1.0, M, T, 0.05, np.random.default_rng(5000 + trial))
            tops += at.query(M // 4)
        assert tops <= 10

    def test_noise_magnitude_bounds(self):
        # |nu| < (4/eps) log(2T/xi) and |M_hat - M| < (2/eps) log(2T/xi),
        # each with frequency >= 1 - xi at xi = 0.05
        eps, M, T, xi = 1.0, 256, 10**6, 0.05
        nu_bound = (4.0 / eps) * math.log(2 * T / xi)
        th_bound = (2.0 / eps) * math.log(2 * T / xi)
        rng = np.random.default_rng(77)
        nu_ok = th_ok = 0
        n = 10_000
        for _ in range(n):
            nu_ok += abs(rng.laplace(0, 4.0 / eps)) < nu_bound
            th_ok += abs(rng.laplace(0, 2.0 / eps)) < th_bound
        assert nu_ok / n >= 1 - xi
        assert th_ok / n >= 1 - xi

    def test_top_conditional_buffer_at_least_half(self):
        # simulate flush cycles; conditioned on TOP, p0 < M/2 is rare
        M, T = 256, 10**6
        rng = np.random.default_rng(123)
        tops = low_tops = 0
        at = AboveThreshold(1.0, M, T, 0.05, rng)
        cycles = 0
        p0 = 0
        while cycles < 1000:
            p0 += 1
            if at.query(p0):
                tops += 1
                low_tops += p0 < M / 2
                p0 = 0
                cycles += 1
        assert low_tops / tops <= 0.01

    def test_threshold_resamples_after_top(self):
        at = AboveThreshold(1.0, 256, 10**6, 0.05, np.random.default_rng(9))
        before = at.noisy_threshold
        while not at.query(10**6 // 2):
            pass
        assert at.noisy_threshold != before


class TestPrivacyLedger:
    def test_sequential_sums_parallel_maxes(self):
        led = PrivacyLedger()
        led.declare_group(("par",), "parallel")
        led.charge(("par", "a"), eps=Fraction(1, 4))
        led.charge(("par", "b"), eps=Fraction(1, 4))
        led.charge(("solo",), eps=Fraction(1, 2))
        assert led.totals() == {"eps": Fraction(3, 4)}

    def test_double_registration_trips(self):
        led = PrivacyLedger()
        led.charge(("m",), eps=Fraction(1))
        with pytest.raises(AssertionError):
            led.charge(("m",), eps=Fraction(1))

    def test_numeric_spend(self):
        led = PrivacyLedger()
        led.charge(("a",), eps=Fraction(1, 2), delta1=Fraction(1))
        spend = led.total_spend({"eps": 2.0, "delta1": 1e-6})
        assert spend["eps"] == pytest.approx(1.0)
        assert spend["delta1"] == pytest.approx(1e-6)
