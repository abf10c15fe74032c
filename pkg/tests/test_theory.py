"""Quadratic-problem harness tests: one-step gaps, identity checks, bounds."""

import numpy as np
import pytest

from gcfed.errors import ConfigError
from gcfed.gc_core import centralize_mean_sub
from gcfed.seeding import substream
from gcfed.theory import (
    QuadraticProblem,
    expected_gap_identity_check,
    gap_reduction_terms,
    hyperplane_drift,
    mean_component_sqnorm,
    one_step_gap,
    residual_bound_check,
)

SHAPE = (6, 12)


def centered_w0(seed):
    return centralize_mean_sub(substream(seed, "w0").normal(size=SHAPE))


class TestProblem:
    def test_optimum_is_weighted_center(self):
        centers = np.stack([np.full(SHAPE, 1.0), np.full(SHAPE, 3.0)])
        problem = QuadraticProblem(centers, np.array([0.25, 0.75]))
        np.testing.assert_allclose(problem.optimum, np.full(SHAPE, 2.5))

    def test_centered_construction_puts_optimum_on_hyperplane(self):
        for seed in range(10):
            problem = QuadraticProblem.random(5, SHAPE, seed=seed)
            assert np.abs(problem.optimum.mean(axis=1)).max() <= 1e-12

    def test_weights_must_be_a_distribution(self):
        centers = np.zeros((2, *SHAPE))
        with pytest.raises(ConfigError):
            QuadraticProblem(centers, np.array([0.5, 0.6]))


class TestOneStepGap:
    def test_zero_step_preserves_gap(self):
        problem = QuadraticProblem.random(4, SHAPE, seed=1)
        w0 = substream(1, "w0").normal(size=SHAPE)
        before = float(((w0 - problem.optimum) ** 2).sum())
        assert one_step_gap(problem, w0, eta=0.0) == pytest.approx(before, rel=1e-15)

    def test_single_client_unit_step_lands_on_optimum(self):
        centers = np.zeros((1, *SHAPE))
        problem = QuadraticProblem(centers, np.array([1.0]))
        w0 = substream(2, "w0").normal(size=SHAPE)
        assert one_step_gap(problem, w0, eta=1.0) == pytest.approx(0.0, abs=1e-26)

    def test_projection_never_hurts_on_plane(self):
        for seed in range(20):
            problem = QuadraticProblem.random(5, SHAPE, seed=seed)
            w0 = centered_w0(seed)
            noise = substream(seed, "noise").normal(size=problem.centers.shape) * 0.3
            plain = one_step_gap(problem, w0, 0.1, "plain", noise)
            projected = one_step_gap(problem, w0, 0.1, "projected", noise)
            assert projected <= plain + 1e-12

    def test_deterministic_identity(self):
        # no noise, optimum and start on the hyperplane: the gap difference
        # equals the squared mean component of the mean gradient exactly
        for seed in range(50):
            problem = QuadraticProblem.random(5, SHAPE, seed=seed)
            w0 = centered_w0(seed)
            eta = 0.1
            g_mean = np.einsum("k,kij->ij", problem.weights, problem.client_gradients(w0))
            lhs = one_step_gap(problem, w0, eta, "plain") \
                - one_step_gap(problem, w0, eta, "projected")
            rhs = eta ** 2 * mean_component_sqnorm(g_mean)
            assert abs(lhs - rhs) <= 1e-10

    def test_unknown_strategy_rejected(self):
        problem = QuadraticProblem.random(3, SHAPE, seed=0)
        with pytest.raises(ConfigError):
            one_step_gap(problem, np.zeros(SHAPE), 0.1, "sideways")


class TestGapReductionTerms:
    def test_centralized_and_noiseless_vanish(self):
        g = centralize_mean_sub(substream(3, "g").normal(size=SHAPE))
        b2, a2 = gap_reduction_terms(g, g, eta=0.1)
        assert b2 <= 1e-28
        assert a2 == 0.0

    def test_no_stochasticity_kills_second_term(self):
        g = substream(4, "g").normal(size=SHAPE)
        _, a2 = gap_reduction_terms(g, g, eta=0.5)
        assert a2 == 0.0

    def test_matches_explicit_projector_oracle(self):
        # independently form the rank-one mean projector and take norms
        rng = substream(5, "g")
        g_stoch = rng.normal(size=SHAPE)
        g_mean = rng.normal(size=SHAPE)
        eta = 0.2
        m = SHAPE[1]
        onto_mean = np.full((m, m), 1.0 / m)
        expected_b2 = eta ** 2 * float(((g_mean @ onto_mean) ** 2).sum())
        expected_a2 = eta ** 2 * float((((g_stoch - g_mean) @ onto_mean) ** 2).sum())
        b2, a2 = gap_reduction_terms(g_stoch, g_mean, eta)
        assert b2 == pytest.approx(expected_b2, rel=1e-12)
        assert a2 == pytest.approx(expected_a2, rel=1e-12)

    def test_nonnegative(self):
        rng = substream(6, "g")
        for _ in range(25):
            b2, a2 = gap_reduction_terms(rng.normal(size=SHAPE),
                                         rng.normal(size=SHAPE), eta=0.3)
            assert b2 >= 0.0 and a2 >= 0.0


class TestExpectedGapIdentity:
    def test_zero_noise_reduces_to_deterministic_identity(self):
        problem = QuadraticProblem.random(5, SHAPE, seed=7)
        report = expected_gap_identity_check(problem, centered_w0(7), 0.1, trials=1)
        assert abs(report.measured_reduction - report.predicted_reduction) <= 1e-10
        assert report.a3_mean == pytest.approx(0.0, abs=1e-12)

    def test_stochastic_identity_and_vanishing_cross_term(self):
        problem = QuadraticProblem.random(5, SHAPE, seed=8)
        report = expected_gap_identity_check(problem, centered_w0(8), 0.1,
                                             trials=3000, noise_sigma=0.1, seed=8)
        assert report.relative_error <= 0.02
        assert abs(report.a3_mean) <= 3.0 * report.a3_stderr
        assert report.gap_after_projected <= report.gap_after_plain

    def test_noise_mean_component_never_exceeds_full_noise(self):
        problem = QuadraticProblem.random(4, SHAPE, seed=9)
        w0 = centered_w0(9)
        eta = 0.1
        rng = substream(9, "check-noise")
        g_mean = np.einsum("k,kij->ij", problem.weights, problem.client_gradients(w0))
        for _ in range(200):
            noise = rng.normal(size=problem.centers.shape) * 0.2
            g_draw = np.einsum("k,kij->ij", problem.weights,
                               problem.client_gradients(w0) + noise)
            _, a2 = gap_reduction_terms(g_draw, g_mean, eta)
            assert a2 <= eta ** 2 * float(((g_draw - g_mean) ** 2).sum()) + 1e-15


class TestResidualBound:
    def test_centered_optimum_has_no_residual(self):
        w_star = centralize_mean_sub(substream(10, "w").normal(size=SHAPE))
        lhs, rhs, holds = residual_bound_check(w_star)
        assert holds
        assert lhs == pytest.approx(0.0, abs=1e-25)
        assert rhs == pytest.approx(0.0, abs=1e-25)

    def test_pure_mean_direction_closed_form(self):
        # a single all-ones row of width m: both sides equal m/2
        m = 16
        w_star = np.ones((1, m))
        lhs, rhs, holds = residual_bound_check(w_star)
        assert holds
        assert lhs == pytest.approx(m / 2.0, rel=1e-12)
        assert rhs == pytest.approx(m / 2.0, rel=1e-12)

    def test_random_optima_hold_with_equality(self):
        for seed in range(100):
            w_star = substream(seed, "residual").normal(size=SHAPE)
            lhs, rhs, holds = residual_bound_check(w_star)
            assert holds
            assert lhs <= rhs + 1e-12
            assert abs(lhs - rhs) <= 1e-10  # equality on the quadratic family

    def test_larger_smoothness_keeps_slack(self):
        w_star = substream(11, "residual").normal(size=SHAPE)
        lhs, rhs, holds = residual_bound_check(w_star, smoothness=2.0)
        assert holds and lhs < rhs


class TestTrajectories:
    def test_projected_iterates_stay_on_hyperplane(self):
        problem = QuadraticProblem.random(5, SHAPE, seed=12)
        drift = hyperplane_drift(problem, centered_w0(12), eta=0.1, steps=100,
                                 noise_sigma=0.1, seed=12)
        assert drift <= 1e-12

    def test_convergence_toward_centered_optimum(self):
        problem = QuadraticProblem.random(5, SHAPE, seed=13)
        w = centered_w0(13)
        for _ in range(60):
            grads = problem.client_gradients(w)
            grads = np.stack([centralize_mean_sub(g) for g in grads])
            w = w - 0.3 * np.einsum("k,kij->ij", problem.weights, grads)
        assert float(((w - problem.optimum) ** 2).sum()) <= 1e-8
