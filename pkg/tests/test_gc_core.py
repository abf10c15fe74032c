"""Centralization operator tests: examples, algebra, and ablation modes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcfed.errors import ConfigError, NotCentralizableError
from gcfed.gc_core import (
    AXIS_MODES,
    ProjectionSpec,
    centralize_mean_sub,
    centralize_project,
    is_centralizable,
    mu_vector,
    reduction_length,
    select_local_layers,
)

FC = np.array([[1.0, 3.0], [3.0, 5.0]])


def random_tensor(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


class TestMuVector:
    def test_fc_default_reduction(self):
        mu = mu_vector(FC)
        assert mu.shape == (2, 1)
        np.testing.assert_array_equal(mu.ravel(), [2.0, 4.0])

    def test_constant_tensor(self):
        g = np.full((3, 5), 7.25)
        np.testing.assert_array_equal(mu_vector(g), np.full((3, 1), 7.25))

    def test_conv_matches_loop_nest(self):
        g = random_tensor((4, 3, 3, 3), seed=11)
        mu = mu_vector(g)
        assert mu.shape == (4, 1, 1, 1)
        for o in range(4):
            total = 0.0
            for i in range(3):
                for h in range(3):
                    for w in range(3):
                        total += g[o, i, h, w]
            assert mu[o, 0, 0, 0] == pytest.approx(total / 27.0, abs=1e-15)

    def test_one_dimensional_rejected(self):
        with pytest.raises(NotCentralizableError):
            mu_vector(np.ones(4))


class TestMeanSubtraction:
    def test_fc_example(self):
        np.testing.assert_array_equal(centralize_mean_sub(FC),
                                      [[-1.0, 1.0], [-1.0, 1.0]])

    def test_idempotent_on_centralized_input(self):
        g = centralize_mean_sub(random_tensor((6, 9), seed=3))
        again = centralize_mean_sub(g)
        assert np.abs(again - g).max() <= 1e-13

    def test_conv_reduced_means_vanish(self):
        g = centralize_mean_sub(random_tensor((8, 4, 3, 3), seed=5))
        means = g.mean(axis=(1, 2, 3))
        assert np.abs(means).max() <= 1e-13

    def test_input_not_mutated(self):
        g = random_tensor((3, 4), seed=9)
        keep = g.copy()
        centralize_mean_sub(g)
        np.testing.assert_array_equal(g, keep)


class TestProjectionFormulation:
    @pytest.mark.parametrize("shape", [(64, 128), (32, 16, 3, 3)])
    def test_agrees_with_mean_subtraction(self, shape):
        for seed in range(100):
            g = random_tensor(shape, seed)
            diff = np.abs(centralize_project(g) - centralize_mean_sub(g)).max()
            assert diff <= 1e-12

    def test_projector_idempotent(self):
        g = random_tensor((5, 7), seed=21)
        once = centralize_project(g)
        twice = centralize_project(once)
        assert np.abs(twice - once).max() <= 1e-13

    def test_equal_rows_annihilated(self):
        g = np.tile(np.array([[2.0, -1.0, 0.5]]).T, (1, 6))  # every row constant
        assert np.abs(centralize_project(g)).max() <= 1e-15


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    a=st.floats(-5, 5, allow_nan=False),
    b=st.floats(-5, 5, allow_nan=False),
)
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(6, 10))
    h = rng.normal(size=(6, 10))
    lhs = centralize_mean_sub(a * g + b * h)
    rhs = a * centralize_mean_sub(g) + b * centralize_mean_sub(h)
    assert np.abs(lhs - rhs).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_norm_never_increases(seed):
    g = np.random.default_rng(seed).normal(size=(7, 11))
    assert np.linalg.norm(centralize_mean_sub(g)) <= np.linalg.norm(g) + 1e-12


def test_norm_preserved_when_already_zero_mean():
    g = centralize_mean_sub(random_tensor((6, 8), seed=33))
    assert np.linalg.norm(centralize_mean_sub(g)) == pytest.approx(np.linalg.norm(g),
                                                                   rel=1e-13)


class TestAxisModes:
    CONV_SHAPE = (6, 4, 3, 5)  # [C_out, C_in, K_h, K_w]

    @pytest.mark.parametrize("mode,expected_mu_shape", [
        ("per_out", (6, 1, 1, 1)),
        ("per_out_in", (6, 4, 1, 1)),
        ("per_out_spatial", (6, 1, 3, 5)),
        ("per_out_in_kh", (6, 4, 3, 1)),
        ("per_in_spatial", (1, 4, 3, 5)),
    ])
    def test_conv_mu_shapes(self, mode, expected_mu_shape):
        g = random_tensor(self.CONV_SHAPE, seed=4)
        assert mu_vector(g, ProjectionSpec(mode)).shape == expected_mu_shape

    @pytest.mark.parametrize("mode", AXIS_MODES)
    def test_all_modes_zero_their_means(self, mode):
        spec = ProjectionSpec(mode)
        g = centralize_mean_sub(random_tensor(self.CONV_SHAPE, seed=6), spec)
        assert np.abs(g.mean(axis=spec.reduced_axes(4))).max() <= 1e-13

    def test_fc_non_default_modes_degrade_to_default(self):
        g = random_tensor((5, 9), seed=8)
        base = centralize_mean_sub(g)
        for mode in ("per_out_in", "per_out_spatial", "per_out_in_kh"):
            np.testing.assert_array_equal(centralize_mean_sub(g, ProjectionSpec(mode)), base)

    def test_fc_transposed_mode(self):
        g = random_tensor((5, 9), seed=8)
        out = centralize_mean_sub(g, ProjectionSpec("per_in_spatial"))
        assert np.abs(out.mean(axis=0)).max() <= 1e-13

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            ProjectionSpec("per_banana")


class TestDegenerateShapes:
    def test_length_one_reduction_is_skipped(self, caplog):
        g = np.array([[1.0], [2.0]])  # default mode reduces a single column
        with caplog.at_level("WARNING"):
            out = centralize_mean_sub(g)
        np.testing.assert_array_equal(out, g)
        assert "reduction length 1" in caplog.text

    def test_is_centralizable(self):
        assert not is_centralizable(np.ones(3))
        assert not is_centralizable(np.ones((4, 1)))
        assert is_centralizable(np.ones((4, 2)))
        assert reduction_length((4, 2)) == 2
        assert reduction_length((4, 2, 3, 3)) == 18


class TestLayerSelection:
    def test_full_fraction_selects_everything(self):
        assert select_local_layers(4, 1.0) == frozenset({1, 2, 3, 4})

    def test_zero_fraction_selects_nothing(self):
        assert select_local_layers(4, 0.0) == frozenset()

    def test_three_quarters_excludes_last(self):
        assert select_local_layers(4, 0.75) == frozenset({1, 2, 3})

    def test_floor_behavior(self):
        assert select_local_layers(2, 0.75) == frozenset({1})
        assert select_local_layers(3, 0.5) == frozenset({1})

    @pytest.mark.parametrize("bad", [-0.1, 1.5])
    def test_out_of_range_fraction_rejected(self, bad):
        with pytest.raises(ConfigError):
            select_local_layers(4, bad)
