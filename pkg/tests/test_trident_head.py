"""Tests for the shared heads and Trident boundary decoding."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from components.feature_pyramid import PyramidFeatures
from components.gradcheck_suite import identifiable, toy_heads, well_posed
from components.tensor_core import Parameter, Tensor, backward, grad_check, no_grad
from components.trident_head import (
    LevelOutputs,
    boundary_distributions,
    decode_end_offset,
    decode_offsets,
    decode_segment,
    decode_start_offset,
    init_head_params,
    plain_regression_decode,
    run_heads,
)


def _softmax_expectation(logits):
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    return float((p * np.arange(len(logits))).sum())


def _level(rng, T, B, scale=1.0):
    return LevelOutputs(
        level=1,
        cls_logits=Tensor(np.zeros((T, 1))),
        f_start=Tensor(scale * rng.normal(size=T)),
        f_end=Tensor(scale * rng.normal(size=T)),
        f_center=Tensor(scale * rng.normal(size=(T, 2, B + 1))),
    )


@pytest.mark.unit
class TestRunHeads:
    def test_output_shapes_per_level(self, rng):
        params = init_head_params(8, 3, 4, rng)
        feats = PyramidFeatures([Tensor(rng.normal(size=(10, 8))), Tensor(rng.normal(size=(5, 8)))])
        with no_grad():
            out = run_heads(feats, params)
        assert [lvl.cls_logits.shape for lvl in out.levels] == [(10, 3), (5, 3)]
        assert [lvl.f_start.shape for lvl in out.levels] == [(10,), (5,)]
        assert [lvl.f_end.shape for lvl in out.levels] == [(10,), (5,)]
        assert [lvl.f_center.shape for lvl in out.levels] == [(10, 2, 5), (5, 2, 5)]
        assert [lvl.stride for lvl in out.levels] == [1, 2]
        assert out.use_trident

    def test_zero_last_layer_gives_zero_outputs(self, rng):
        params = init_head_params(8, 3, 4, rng)
        for branch in (params.cls, params.start, params.end, params.center):
            branch.layers[-1].w.data[...] = 0.0
            branch.layers[-1].b.data[...] = 0.0
        with no_grad():
            out = run_heads(PyramidFeatures([Tensor(rng.normal(size=(6, 8)))]), params).levels[0]
        for tensor in (out.cls_logits, out.f_start, out.f_end, out.f_center):
            assert not np.any(tensor.data)

    def test_classification_prior_bias(self, rng):
        params = init_head_params(8, 3, 4, rng, cls_prior_prob=0.01)
        np.testing.assert_allclose(params.cls.layers[-1].b.data, -np.log(99.0))
        assert -np.log(99.0) == pytest.approx(-4.59512, abs=1e-5)

    def test_boundary_branches_use_small_init(self):
        params = init_head_params(64, 3, 16, np.random.default_rng(0), boundary_init_std=0.1)
        assert abs(params.start.layers[0].kernel.data.std() - 0.1) < 0.03
        assert abs(params.end.layers[1].w.data.std() - 0.1) < 0.03

    def test_plain_head_has_regression_branch(self, rng):
        params = init_head_params(8, 2, 4, rng, use_trident=False)
        assert params.center is None
        with no_grad():
            out = run_heads(PyramidFeatures([Tensor(rng.normal(size=(6, 8)))]), params)
        assert not out.use_trident
        assert out.levels[0].reg.shape == (6, 2)
        assert np.all(out.levels[0].reg.data >= 0.0)

    @pytest.mark.parametrize("detach,expect_flow", [(True, False), (False, True)])
    def test_boundary_branch_detachment(self, rng, detach, expect_flow):
        params = init_head_params(4, 2, 3, rng, detach_boundary=detach)
        x = Parameter(rng.normal(size=(6, 4)), "x")
        out = run_heads(PyramidFeatures([x]), params).levels[0]
        backward((out.f_start * rng.normal(size=6)).sum() + (out.f_end * rng.normal(size=6)).sum())
        assert bool(np.any(x.grad)) == expect_flow
        assert np.any(params.start.layers[0].w.grad)

    def test_bin_shift_biases_do_not_move_decoded_offsets(self, rng):
        params = init_head_params(4, 2, 3, rng, detach_boundary=False)
        assert [p.name for p in params.bin_shift_biases()] == [
            params.start.layers[-1].b.name, params.end.layers[-1].b.name,
        ]
        x = Tensor(rng.normal(size=(7, 4)))
        backward((decode_offsets(run_heads(PyramidFeatures([x]), params).levels[0], 3) * rng.normal(size=(7, 2))).sum())
        for bias in params.bin_shift_biases():
            assert abs(bias.grad).max() < 1e-12
        assert np.abs(params.center.layers[-1].b.grad).max() > 1e-6
        assert init_head_params(4, 2, 3, rng, use_trident=False).bin_shift_biases() == []

    def test_gradients_match_finite_differences(self, rng):
        def head_loss(draw_rng):
            params = toy_heads(4, 2, 3, draw_rng)
            x = Tensor(draw_rng.normal(size=(7, 4)))

            def loss():
                lvl = run_heads(PyramidFeatures([x]), params).levels[0]
                return (decode_offsets(lvl, 3) * np.array([0.7, -1.3])).sum() + lvl.cls_logits.sum()

            return loss, identifiable(params.parameters(), params)

        loss, params = well_posed(head_loss, rng)
        assert grad_check(loss, params) < 1e-4


@pytest.mark.unit
class TestDecodeOffsets:
    def test_uniform_logits_give_half_bins(self):
        T, B = 20, 16
        assert decode_start_offset(np.zeros(T), np.zeros((T, B + 1)), 16) == pytest.approx(8.0)
        assert decode_end_offset(np.zeros(T), np.zeros((T, B + 1)), 3) == pytest.approx(8.0)

    def test_concentrated_start_mass(self):
        T, B = 20, 16
        center = np.zeros((T, B + 1))
        center[10, 3] = 100.0
        assert decode_start_offset(np.zeros(T), center, 10) == pytest.approx(3.0, abs=1e-6)

    def test_concentrated_end_mass_at_bin_zero(self):
        T, B = 20, 16
        center = np.zeros((T, B + 1))
        center[4, 0] = 100.0
        assert decode_end_offset(np.zeros(T), center, 4) == pytest.approx(0.0, abs=1e-6)

    def test_hand_evaluated_two_bin_case(self):
        logits = np.array([0.5, -1.0, 2.0])
        center = np.zeros((3, 3))
        center[2] = logits
        e = np.exp(logits)
        expected = (e[1] + 2 * e[2]) / e.sum()
        assert decode_start_offset(np.zeros(3), center, 2) == pytest.approx(expected, abs=1e-12)

    def test_start_at_sequence_start_is_zero(self, rng):
        lvl = _level(rng, 12, 8)
        d = decode_start_offset(lvl.f_start.data, lvl.f_center.data[:, 0, :], 0)
        assert d == 0.0

    def test_boundary_distributions_match_decoded_offsets(self, rng):
        lvl = _level(rng, 12, 4)
        with no_grad():
            start, end = boundary_distributions(lvl, 4)
            offsets = decode_offsets(lvl, 4).data
        assert start.shape == end.shape == (12, 5)
        np.testing.assert_allclose(start.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(start @ np.arange(5.0), offsets[:, 0], atol=1e-12)
        np.testing.assert_allclose(end @ np.arange(5.0), offsets[:, 1], atol=1e-12)
        assert start[0, 0] == 1.0
        assert end[-1, 0] == 1.0

    def test_masked_bins_use_in_range_instants_only(self, rng):
        f_start = rng.normal(size=5)
        center = rng.normal(size=(5, 9))
        expected = _softmax_expectation(f_start[[2, 1, 0]] + center[2, :3])
        assert decode_start_offset(f_start, center, 2) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("B", [2, 8, 16])
    def test_vectorized_matches_per_instant(self, rng, B):
        T = 24
        lvl = _level(rng, T, B, scale=2.0)
        with no_grad():
            offsets = decode_offsets(lvl, B).data
        for t in range(T):
            assert offsets[t, 0] == pytest.approx(
                decode_start_offset(lvl.f_start.data, lvl.f_center.data[:, 0, :], t), abs=1e-10
            )
            assert offsets[t, 1] == pytest.approx(
                decode_end_offset(lvl.f_end.data, lvl.f_center.data[:, 1, :], t), abs=1e-10
            )

    @pytest.mark.parametrize("B", [2, 8, 16])
    def test_matches_softmax_expectation_oracle(self, rng, B):
        T = 2 * B + 1
        for _ in range(100):
            f_start, f_end = 3.0 * rng.normal(size=T), 3.0 * rng.normal(size=T)
            left, right = 3.0 * rng.normal(size=(T, B + 1)), 3.0 * rng.normal(size=(T, B + 1))
            t = B
            bins = np.arange(B + 1)
            expected_start = _softmax_expectation(f_start[t - bins] + left[t])
            expected_end = _softmax_expectation(f_end[t + bins] + right[t])
            assert decode_start_offset(f_start, left, t) == pytest.approx(expected_start, abs=1e-6)
            assert decode_end_offset(f_end, right, t) == pytest.approx(expected_end, abs=1e-6)

    @settings(max_examples=30)
    @given(st.integers(min_value=0, max_value=2 ** 31), st.sampled_from([1, 4, 16]), st.floats(0.1, 50.0))
    def test_offsets_are_bounded(self, seed, B, scale):
        lvl = _level(np.random.default_rng(seed), 10, B, scale)
        with no_grad():
            offsets = decode_offsets(lvl, B).data
        assert np.all(offsets >= 0.0)
        assert np.all(offsets <= B + 1e-9)

    def test_shift_invariance(self, rng):
        lvl = _level(rng, 12, 8)
        center = lvl.f_center.data[:, 0, :]
        shifted = center.copy()
        shifted[9] += 5.0
        assert decode_start_offset(lvl.f_start.data, shifted, 9) == pytest.approx(
            decode_start_offset(lvl.f_start.data, center, 9), abs=1e-12
        )

    def test_reversal_mirrors_start_and_end(self, rng):
        T, B = 15, 4
        lvl = _level(rng, T, B)
        mirrored = LevelOutputs(
            level=1,
            cls_logits=lvl.cls_logits,
            f_start=Tensor(lvl.f_end.data[::-1].copy()),
            f_end=Tensor(lvl.f_start.data[::-1].copy()),
            f_center=Tensor(lvl.f_center.data[::-1, ::-1, :].copy()),
        )
        with no_grad():
            original = decode_offsets(lvl, B).data
            flipped = decode_offsets(mirrored, B).data
        np.testing.assert_allclose(flipped, original[::-1, ::-1], atol=1e-12)

    def test_decoded_offsets_are_differentiable(self, rng):
        T, B = 9, 4
        lvl = LevelOutputs(
            level=1,
            cls_logits=Tensor(np.zeros((T, 1))),
            f_start=Parameter(rng.normal(size=T), "f_start"),
            f_end=Parameter(rng.normal(size=T), "f_end"),
            f_center=Parameter(rng.normal(size=(T, 2, B + 1)), "f_center"),
        )
        weights = rng.normal(size=(T, 2))
        params = [lvl.f_start, lvl.f_end, lvl.f_center]
        assert grad_check(lambda: (decode_offsets(lvl, B) * weights).sum(), params) < 1e-4


@pytest.mark.unit
class TestDecodeSegment:
    def test_scaled_coordinates(self):
        assert decode_segment(3, 7, 3.0, 2.0) == (16.0, 36.0)
        assert decode_segment(3, 5, 1.5, 2.0) == (14.0, 28.0)

    def test_stride_one_is_identity(self):
        assert decode_segment(1, 10, 2.5, 4.0) == (7.5, 14.0)

    def test_segment_brackets_its_instant(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            level, t = int(rng.integers(1, 7)), int(rng.integers(0, 64))
            d_st, d_et = rng.uniform(0, 16, size=2)
            start, end = decode_segment(level, t, d_st, d_et)
            assert start <= t * 2 ** (level - 1) <= end

    def test_plain_regression_matches_shared_scaling(self):
        reg = np.zeros((10, 2))
        reg[7] = [3.0, 2.0]
        assert plain_regression_decode(reg, 3, 7) == (16.0, 36.0)
        assert plain_regression_decode(reg, 3, 7) == decode_segment(3, 7, 3.0, 2.0)

    def test_plain_regression_clamps_negatives(self):
        reg = np.array([[-1.0, -2.0]] * 6)
        assert plain_regression_decode(reg, 2, 5) == (10.0, 10.0)
