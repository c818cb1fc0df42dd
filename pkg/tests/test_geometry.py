import numpy as np
import pytest

from corestream.geometry import (
    TooManyCombinationsError,
    WeightedSet,
    approx_cluster,
    brute_force_opt,
    cost,
    dedupe,
)


def naive_cost(centers, points, weights, z):
    """Independent double-loop evaluator (oracle)."""
    total = 0.0
    for x, w in zip(points, weights):
        best = min(sum((xi - ci) ** 2 for xi, ci in zip(x, c)) for c in centers)
        total += w * (best if z == 2 else best**0.5)
    return total


class TestCost:
    def test_point_equals_center(self):
        assert cost(np.array([[0.0]]), np.array([[0.0]]), None, 2) == 0.0

    def test_one_dim_both_objectives(self):
        S = np.array([[0.0], [2.0]])
        C = np.array([[0.0]])
        assert cost(C, S, None, 2) == pytest.approx(4.0)
        assert cost(C, S, None, 1) == pytest.approx(2.0)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        S = rng.normal(size=(50, 2))
        w = rng.uniform(0.5, 2.0, size=50)
        C = rng.normal(size=(3, 2))
        for z in (1, 2):
            assert cost(C, S, w, z) == pytest.approx(
                naive_cost(C, S, w, z), rel=1e-9
            )

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            cost(np.empty((0, 2)), np.ones((3, 2)))
        assert cost(np.ones((1, 2)), np.empty((0, 2))) == 0.0

    def test_weight_homogeneity(self):
        rng = np.random.default_rng(8)
        S = rng.normal(size=(30, 3))
        w = rng.uniform(0.1, 1.0, size=30)
        C = rng.normal(size=(2, 3))
        for lam in (0.5, 3.0, 17.0):
            assert cost(C, S, lam * w, 2) == pytest.approx(lam * cost(C, S, w, 2))

    def test_adding_centers_never_increases_cost(self):
        rng = np.random.default_rng(9)
        S = rng.normal(size=(40, 2))
        C = rng.normal(size=(2, 2))
        extra = rng.normal(size=(3, 2))
        both = np.vstack([C, extra])
        assert cost(both, S, None, 2) <= cost(C, S, None, 2) + 1e-12

    def test_relaxed_triangle_bound(self):
        # d^2(a,c) <= 2 d^2(a,b) + 2 d^2(b,c) transported to cost form
        rng = np.random.default_rng(10)
        S = rng.normal(size=(25, 2))
        C1 = rng.normal(size=(3, 2))
        C2 = rng.normal(size=(3, 2))
        diff = S[:, None, :] - C1[None, :, :]
        sq = np.einsum("nmd,nmd->nm", diff, diff)
        nearest = C1[np.argmin(sq, axis=1)]
        proj_term = ((nearest[:, None, :] - C2[None, :, :]) ** 2).sum(-1).min(1).sum()
        assert cost(C2, S, None, 2) <= 2 * cost(C1, S, None, 2) + 2 * proj_term + 1e-9


class TestApproxCluster:
    def test_k_distinct_points_zero_cost(self):
        S = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        C = approx_cluster(S, None, 3, seed=1)
        assert cost(C, S, None, 2) == pytest.approx(0.0, abs=1e-12)

    def test_two_cluster_recovery_vs_brute_force(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(100, 2)) + np.array([25.0, 0.0])
        b = rng.normal(size=(100, 2)) - np.array([25.0, 0.0])
        S = np.vstack([a, b])
        C = approx_cluster(S, None, 2, seed=3)
        pool = np.vstack([a.mean(axis=0), b.mean(axis=0)])
        _, opt = brute_force_opt(S, None, 2, 2, pool)
        assert cost(C, S, None, 2) <= 1.05 * opt

    def test_zero_iters_is_seeding_and_monotone(self):
        rng = np.random.default_rng(12)
        S = rng.normal(size=(60, 2)) * 4
        seeded = approx_cluster(S, None, 3, seed=5, lloyd_iters=0)
        refined = approx_cluster(S, None, 3, seed=5, lloyd_iters=5)
        assert cost(seeded, S, None, 2) >= cost(refined, S, None, 2) - 1e-12

    def test_cost_nonincreasing_in_iterations(self):
        rng = np.random.default_rng(13)
        S = rng.normal(size=(80, 2)) * 3
        w = rng.uniform(0.5, 2.0, size=80)
        costs = [
            cost(approx_cluster(S, w, 4, z=z, seed=9, lloyd_iters=i), S, w, z)
            for z in (1, 2)
            for i in range(6)
        ]
        for z_block in (costs[:6], costs[6:]):
            for earlier, later in zip(z_block, z_block[1:]):
                assert later <= earlier + 1e-9

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(14)
        S = rng.normal(size=(50, 3))
        C1 = approx_cluster(S, None, 3, seed=21)
        C2 = approx_cluster(S, None, 3, seed=21)
        np.testing.assert_array_equal(C1, C2)

    def test_duplicates_when_fewer_distinct(self):
        S = np.array([[1.0, 1.0], [1.0, 1.0]])
        C = approx_cluster(S, None, 3, seed=0)
        assert C.shape == (3, 2)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            approx_cluster(np.ones((3, 2)), None, 0)


class TestBruteForce:
    def test_pool_equals_points(self):
        S = np.array([[0.0], [10.0]])
        C, c = brute_force_opt(S, None, 2, 2, S)
        assert c == pytest.approx(0.0)

    def test_four_point_enumeration(self):
        # hand oracle over all 6 pairs of {0,1,9,10}: every end-split pair
        # costs 1 + 1 = 2, the two same-end pairs cost 145
        S = np.array([[0.0], [1.0], [9.0], [10.0]])
        pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        oracle = min(
            sum(min((s - S[i]) ** 2, (s - S[j]) ** 2) for s in S.ravel())
            for i, j in pairs
        )
        C, c = brute_force_opt(S, None, 2, 2, S)
        assert c == pytest.approx(float(oracle)) == pytest.approx(2.0)
        vals = sorted(C.ravel())
        assert vals[0] in (0.0, 1.0) and vals[1] in (9.0, 10.0)

    def test_k_equals_pool(self):
        rng = np.random.default_rng(15)
        S = rng.normal(size=(10, 2))
        pool = rng.normal(size=(4, 2))
        C, c = brute_force_opt(S, None, 4, 2, pool)
        assert c == pytest.approx(cost(pool, S, None, 2))

    def test_guard(self):
        pool = np.arange(60, dtype=float).reshape(-1, 1)
        with pytest.raises(TooManyCombinationsError):
            brute_force_opt(pool, None, 20, 2, pool)


class TestWeightedSet:
    def test_drops_nonpositive_weights(self):
        ws = WeightedSet(np.array([[1.0], [2.0], [3.0]]), np.array([1.0, 0.0, -2.0]))
        assert len(ws) == 1
        assert ws.total_weight == pytest.approx(1.0)

    def test_union_dedupes_exactly(self):
        a = WeightedSet(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 2.0]))
        b = WeightedSet(np.array([[1.0, 2.0], [5.0, 6.0]]), np.array([4.0, 1.0]))
        u = a.union(b)
        assert len(u) == 3
        assert u.total_weight == pytest.approx(8.0)
        rng = np.random.default_rng(16)
        C = rng.normal(size=(2, 2))
        concat_cost = cost(C, np.vstack([a.points, b.points]),
                           np.concatenate([a.weights, b.weights]), 2)
        assert cost(C, u.points, u.weights, 2) == pytest.approx(concat_cost)

    def test_dedupe_preserves_mass(self):
        pts = np.array([[0.0], [0.0], [1.0]])
        w = np.array([1.0, 2.0, 3.0])
        ws = dedupe(pts, w)
        assert len(ws) == 2 and ws.total_weight == pytest.approx(6.0)
