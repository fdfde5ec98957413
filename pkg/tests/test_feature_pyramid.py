"""Tests for the embedding stage and the feature pyramid."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from components.feature_pyramid import build_pyramid, embed, init_embed_params, level_lengths
from components.sgp_layer import init_sgp_params, sgp_block
from components.tensor_core import Tensor, grad_check, no_grad
from utils.exceptions import ConfigurationError


def _levels(num_levels, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return [init_sgp_params(dim, 3, 1.5, 2, 4, rng, prefix=f"level{i + 1}") for i in range(num_levels)]


@pytest.mark.unit
class TestEmbed:
    def test_zero_weights_give_zero_output(self, rng):
        p = init_embed_params(4, 8, rng)
        for param in p.parameters():
            param.data[...] = 0.0
        out = embed(Tensor(rng.normal(size=(9, 4))), p)
        np.testing.assert_array_equal(out.data, np.zeros((9, 8)))

    @given(st.integers(min_value=1, max_value=40))
    def test_maps_input_width_to_model_width(self, T):
        p = init_embed_params(3, 8, np.random.default_rng(0))
        with no_grad():
            assert embed(Tensor(np.ones((T, 3))), p).shape == (T, 8)

    def test_gradients_match_finite_differences(self, rng):
        p = init_embed_params(3, 4, rng)
        x = Tensor(rng.normal(size=(7, 3)))
        weights = rng.normal(size=(7, 4))
        assert grad_check(lambda: (embed(x, p) * weights).sum(), p.parameters()) < 1e-4


@pytest.mark.unit
class TestBuildPyramid:
    def test_single_level_is_one_block(self, rng):
        params = _levels(1)
        x = Tensor(rng.normal(size=(12, 8)))
        with no_grad():
            pyramid = build_pyramid(x, params)
            expected = sgp_block(x, params[0]).data
        assert pyramid.num_levels == 1
        np.testing.assert_array_equal(pyramid.levels[0].data, expected)

    def test_level_lengths_halve(self, rng):
        with no_grad():
            pyramid = build_pyramid(Tensor(rng.normal(size=(64, 8))), _levels(6))
        assert pyramid.lengths == [64, 32, 16, 8, 4, 2]
        assert all(level.shape[1] == 8 for level in pyramid.levels)

    def test_odd_lengths_use_ceil(self):
        assert level_lengths(13, 4) == [13, 7, 4, 2]

    @given(st.integers(min_value=1, max_value=300), st.integers(min_value=1, max_value=8))
    def test_total_instants_at_most_twice_input(self, T, L):
        lengths = level_lengths(T, L)
        assert len(lengths) == L
        assert sum(lengths) <= 2 * T + L

    def test_requires_a_level(self, rng):
        with pytest.raises(ConfigurationError) as exc:
            build_pyramid(Tensor(rng.normal(size=(4, 8))), [])
        assert exc.value.error_code == "BAD_LEVELS"

    def test_perturbation_stays_local_at_first_level(self, rng):
        params = _levels(2)
        for p in params:
            p.fc_phi_w.data[...] = 0.0
            p.fc_phi_b.data[...] = 0.0
        x = rng.normal(size=(40, 8))
        bumped = x.copy()
        bumped[20] += 1.0
        with no_grad():
            base = build_pyramid(Tensor(x), params)
            moved = build_pyramid(Tensor(bumped), params)
        delta = np.abs(moved.levels[0].data - base.levels[0].data).max(axis=1)
        assert np.all(delta[np.abs(np.arange(40) - 20) > 3] == 0.0)
