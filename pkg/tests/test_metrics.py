import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moppo.metrics import (
    DimensionUnsupported,
    EmptyFront,
    FrontTooSmall,
    expected_utility,
    hypervolume,
    monte_carlo_hypervolume,
    pareto_filter,
    reference_point,
    sparsity,
)
from moppo.weightspace import generate_simplex_grid


def brute_pareto(points):
    """O(n^2) dominance check with explicit loops; keeps first copy of duplicates."""
    pts = [tuple(p) for p in points]
    keep = []
    for i, p in enumerate(pts):
        dominated = any(
            all(a >= b for a, b in zip(q, p)) and any(a > b for a, b in zip(q, p))
            for q in pts)
        if not dominated and p not in pts[:i]:
            keep.append(p)
    return keep


def inclusion_exclusion_hv(points, ref):
    """HV as the measure of a union of boxes by inclusion-exclusion (small n only)."""
    pts = [np.asarray(p, float) for p in points]
    ref = np.asarray(ref, float)
    total = 0.0
    for r in range(1, len(pts) + 1):
        for combo in __import__("itertools").combinations(pts, r):
            corner = np.min(combo, axis=0)
            total += (-1) ** (r + 1) * float(np.prod(np.clip(corner - ref, 0, None)))
    return total


class TestParetoFilter:
    def test_corner(self):
        assert pareto_filter([(1, 2), (2, 1), (0, 0)]).tolist() == [[1, 2], [2, 1]]

    def test_duplicates(self):
        assert pareto_filter([(1, 1), (1, 1)]).tolist() == [[1, 1]]

    def test_random_3d_against_brute_force(self):
        rng = np.random.default_rng(3)
        pts = rng.random((200, 3))
        assert [tuple(p) for p in pareto_filter(pts)] == brute_pareto(pts)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=30))
    def test_idempotent_and_matches_oracle(self, pts):
        once = pareto_filter(pts)
        assert [tuple(p) for p in once] == brute_pareto(pts)
        np.testing.assert_array_equal(pareto_filter(once), once)


class TestHypervolume:
    def test_two_points(self):
        assert hypervolume([(1, 2), (2, 1)], (0, 0)) == 3.0

    def test_single_box(self):
        assert hypervolume([(2, 3)], (0, 0)) == 6.0

    def test_unit_cube(self):
        assert hypervolume([(1, 1, 1)], (0, 0, 0)) == 1.0

    def test_points_below_reference_dropped(self):
        assert hypervolume([(1, 1), (-1, 5)], (0, 0)) == 1.0

    def test_four_objectives_unsupported(self):
        with pytest.raises(DimensionUnsupported):
            hypervolume([(1, 1, 1, 1)], (0, 0, 0, 0))

    @pytest.mark.parametrize("m", [2, 3])
    def test_matches_inclusion_exclusion(self, m):
        rng = np.random.default_rng(m)
        for _ in range(20):
            pts = rng.random((rng.integers(1, 8), m))
            assert hypervolume(pts, np.zeros(m)) == pytest.approx(
                inclusion_exclusion_hv(pts, np.zeros(m)), rel=1e-12, abs=1e-14)

    @pytest.mark.parametrize("m", [2, 3])
    def test_monte_carlo(self, m):
        rng = np.random.default_rng(10 + m)
        pts = rng.random((15, m))
        mc = monte_carlo_hypervolume(pts, np.zeros(m), 200_000, rng)
        assert hypervolume(pts, np.zeros(m)) == pytest.approx(mc, rel=0.02)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 3), st.integers(0, 2**32 - 1))
    def test_monotone(self, m, seed):
        rng = np.random.default_rng(seed)
        pts = rng.random((rng.integers(1, 12), m))
        ref = np.zeros(m)
        base = hypervolume(pts, ref)
        extra = rng.random(m)
        assert hypervolume(np.vstack([pts, extra]), ref) >= base
        # a point dominated by an existing one leaves HV exactly unchanged
        dominated = pts[0] * rng.uniform(0.1, 1.0, m)
        assert hypervolume(np.vstack([pts, dominated]), ref) == base


class TestExpectedUtility:
    def test_two_axes(self):
        grid = generate_simplex_grid(2, 0.5)
        assert expected_utility([(1, 0), (0, 1)], grid) == pytest.approx(5 / 6, abs=1e-15)

    def test_single_point(self):
        grid = generate_simplex_grid(3, 0.25)
        p = np.array([0.3, 2.0, -1.0])
        assert expected_utility([p], grid) == pytest.approx(np.mean([np.dot(w.weights, p) for w in grid]))

    def test_dominance_monotone(self):
        grid = generate_simplex_grid(2, 0.01)
        assert expected_utility([(2, 2)], grid) > expected_utility([(1, 1)], grid)

    def test_empty(self):
        with pytest.raises(EmptyFront):
            expected_utility(np.zeros((0, 2)), generate_simplex_grid(2, 0.5))


class TestSparsity:
    def test_two_points(self):
        assert sparsity([(0, 1), (1, 0)]) == 2.0

    def test_three_collinear(self):
        assert sparsity([(0, 1), (0.5, 0.5), (1, 0)]) == 0.5

    def test_duplicates_add_nothing(self):
        assert sparsity([(0, 1), (1, 0), (1, 0)]) == pytest.approx(2.0 / 2)

    def test_too_small(self):
        with pytest.raises(FrontTooSmall):
            sparsity([(1, 1)])


def test_reference_point_below_all():
    pts = np.array([[1.0, 5.0], [3.0, 2.0]])
    ref = reference_point(pts)
    np.testing.assert_allclose(ref, [1.0 - 0.02, 2.0 - 0.03])
    assert np.all(pts > ref)


def test_quarter_disk_riemann():
    theta = np.linspace(0, math.pi / 2, 1001)
    arc = np.column_stack([np.cos(theta), np.sin(theta)])
    assert hypervolume(arc, (0, 0)) == pytest.approx(math.pi / 4, abs=0.002)
