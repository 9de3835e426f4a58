"""Minimum-norm solver tests: closed form, Frank-Wolfe, lattice oracle,
descent condition, and the scale/minimality properties."""

import numpy as np
import pytest

from edgecloud.moo import (GradientBundle, SimplexWeights, check_descent,
                           grid_oracle, solve_min_norm)
from edgecloud.nncore import UsageError


def random_bundle(rng, p, max_dim=32):
    d = int(rng.integers(2, max_dim + 1))
    scale = 10.0 ** rng.uniform(-2, 2)
    return GradientBundle(scale * rng.standard_normal((p, d)))


class TestSolveMinNorm:
    def test_orthonormal_pair(self):
        weights, combined = solve_min_norm([[1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(weights.alpha, [0.5, 0.5])
        assert np.allclose(combined, [0.5, 0.5])
        assert combined @ combined == pytest.approx(0.5)
        _, oracle_min = grid_oracle([[1.0, 0.0], [0.0, 1.0]], 1e-3)
        assert oracle_min == pytest.approx(0.5, abs=1e-3)

    def test_identical_gradients_return_them_exactly(self):
        g = np.array([0.3, -1.2, 4.5])
        _, combined = solve_min_norm([g, g])
        assert np.array_equal(combined, g)

    def test_nested_pair_picks_shorter_vertex(self):
        weights, combined = solve_min_norm([[2.0, 0.0], [1.0, 0.0]])
        assert np.allclose(weights.alpha, [0.0, 1.0])
        assert np.allclose(combined, [1.0, 0.0])
        ok, inner = check_descent([[2.0, 0.0], [1.0, 0.0]], combined)
        assert ok and inner[0] == pytest.approx(2.0)
        # fine alpha lattice agrees
        alphas = np.linspace(0.0, 1.0, 10_001)
        norms = (alphas * 2.0 + (1 - alphas) * 1.0) ** 2
        assert norms.min() >= combined @ combined - 1e-12

    def test_opposing_pair_is_stationary(self):
        _, combined = solve_min_norm([[1.0, 0.0], [-1.0, 0.0]])
        assert np.allclose(combined, [0.0, 0.0])

    def test_all_zero_bundle(self):
        weights, combined = solve_min_norm(np.zeros((3, 4)))
        assert np.allclose(weights.alpha, 1.0 / 3.0)
        assert np.array_equal(combined, np.zeros(4))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(UsageError):
            GradientBundle.from_vectors([[1.0, 0.0], [1.0, 0.0, 0.0]])

    def test_single_gradient_rejected(self):
        with pytest.raises(UsageError):
            solve_min_norm([[1.0, 0.0]])

    def test_three_basis_vectors(self):
        weights, combined = solve_min_norm(np.eye(3), tol=1e-14)
        assert np.allclose(weights.alpha, 1.0 / 3.0, atol=1e-6)
        assert combined @ combined == pytest.approx(1.0 / 3.0, abs=1e-9)


class TestGridOracle:
    def test_orthonormal_pair_step_1e3(self):
        _, best = grid_oracle([[1.0, 0.0], [0.0, 1.0]], 1e-3)
        assert best == pytest.approx(0.5, abs=1e-3)

    def test_three_basis_vectors(self):
        weights, best = grid_oracle(np.eye(3), 1e-2)
        assert best == pytest.approx(1.0 / 3.0, abs=1e-3)
        assert np.allclose(weights.alpha, 1.0 / 3.0, atol=1e-2)

    def test_repeated_direction(self):
        g = np.array([1.5, -0.5])
        _, best = grid_oracle([g, g, g], 1e-2)
        assert best == pytest.approx(float(g @ g), rel=1e-9)

    def test_unsupported_p_rejected(self):
        with pytest.raises(UsageError):
            grid_oracle(np.eye(4), 1e-2)

    def test_coarse_step_rejected(self):
        with pytest.raises(UsageError):
            grid_oracle(np.eye(2), 0.1)


class TestCheckDescent:
    def test_orthonormal_combination(self):
        ok, inner = check_descent([[1.0, 0.0], [0.0, 1.0]], np.array([0.5, 0.5]))
        assert ok
        assert np.allclose(inner, [0.5, 0.5])

    def test_stationary_point(self):
        ok, inner = check_descent([[1.0, 0.0], [-1.0, 0.0]], np.zeros(2))
        assert ok and np.allclose(inner, 0.0)

    def test_negative_control(self):
        ok, inner = check_descent([[1.0, 0.0], [-1.0, 0.0]], np.array([1.0, 0.0]))
        assert not ok
        assert inner[1] == pytest.approx(-1.0)


class TestProperties:
    def test_oracle_equivalence_p2(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            bundle = random_bundle(rng, 2)
            _, combined = solve_min_norm(bundle)
            _, oracle_min = grid_oracle(bundle, 1e-3)
            max_norm2 = float(np.max(np.einsum("ij,ij->i", bundle.grads, bundle.grads)))
            assert abs(float(combined @ combined) - oracle_min) <= 3e-3 * max_norm2

    def test_descent_holds_everywhere(self):
        rng = np.random.default_rng(1)
        for p in (2, 3):
            for _ in range(200):
                bundle = random_bundle(rng, p)
                _, combined = solve_min_norm(bundle)
                ok, _ = check_descent(bundle, combined)
                assert ok

    def test_scale_covariance_p2(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            bundle = random_bundle(rng, 2)
            c = float(10.0 ** rng.uniform(-3, 3))
            w1, comb1 = solve_min_norm(bundle)
            w2, comb2 = solve_min_norm(GradientBundle(c * bundle.grads))
            assert np.allclose(w1.alpha, w2.alpha, atol=1e-12)
            assert np.allclose(comb2, c * comb1, rtol=1e-9, atol=1e-12)

    def test_scale_covariance_p3(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            bundle = random_bundle(rng, 3)
            c = float(10.0 ** rng.uniform(-2, 2))
            w1, comb1 = solve_min_norm(bundle, tol=1e-14)
            w2, comb2 = solve_min_norm(GradientBundle(c * bundle.grads), tol=1e-14 * c * c)
            assert np.allclose(w1.alpha, w2.alpha, atol=1e-5)
            norm1 = float(comb1 @ comb1)
            norm2 = float(comb2 @ comb2)
            assert norm2 == pytest.approx(c * c * norm1, rel=1e-6, abs=1e-12)

    def test_minimality_against_vertices_and_random_points(self):
        rng = np.random.default_rng(4)
        for p in (2, 3):
            for _ in range(50):
                bundle = random_bundle(rng, p)
                _, combined = solve_min_norm(bundle)
                best = float(combined @ combined)
                slack = 1e-9 * max(1.0, float(np.abs(bundle.grads).max()) ** 2)
                for g in bundle.grads:
                    assert best <= float(g @ g) + slack
                simplex = rng.dirichlet(np.ones(p), size=100)
                combos = simplex @ bundle.grads
                norms = np.einsum("ij,ij->i", combos, combos)
                assert best <= norms.min() + slack

    def test_simplex_weights_validated(self):
        with pytest.raises(UsageError):
            SimplexWeights(np.array([0.6, 0.6]))
        with pytest.raises(UsageError):
            SimplexWeights(np.array([-0.1, 1.1]))
