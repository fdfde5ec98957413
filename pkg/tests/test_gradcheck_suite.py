"""Tests for the finite-difference verification suite."""

import numpy as np
import pytest

from components.gradcheck_suite import (
    CHECKS,
    KINK_MARGIN_STEPS,
    MAX_DRAWS,
    build_checks,
    run_gradcheck_suite,
    toy_clip,
    toy_config,
    toy_heads,
    well_posed,
)
from components.tensor_core import Parameter, kink_margin, no_grad, relu
from utils.exceptions import NumericError


@pytest.mark.unit
class TestToyProblem:
    def test_toy_config_is_small_and_valid(self):
        cfg = toy_config()
        cfg.validate()
        assert (cfg.num_bins, cfg.num_levels, cfg.embed_dim, cfg.max_seq_len) == (4, 2, 8, 16)
        assert toy_config(num_bins=2).num_bins == 2

    def test_toy_clip_segments_fit_the_clip(self):
        cfg = toy_config()
        features, segments = toy_clip(cfg, np.random.default_rng(0))
        assert features.shape == (16, 4)
        assert all(seg.end <= cfg.max_seq_len for seg in segments)

    def test_toy_heads_have_unit_scale_boundary_branches(self):
        heads = toy_heads(8, 2, 4, np.random.default_rng(0))
        assert heads.start.layers[0].kernel.data.std() > 0.25
        assert np.any(heads.end.layers[-1].b.data != 0.0)


@pytest.mark.unit
class TestBuildChecks:
    def test_every_block_has_a_check(self):
        names = set(build_checks(0))
        assert {"fc_forward", "depthwise_conv1d", "sgp_block", "conv_block", "trident_heads", "total_loss"} <= names
        assert names == set(CHECKS)

    def test_each_check_owns_its_tensors(self):
        checks = build_checks(0)
        assert [p.shape for p in checks["fc_forward"][1]] == [(4, 3), (3, 2), (2,)]
        assert [p.shape for p in checks["depthwise_conv1d"][1]] == [(8, 4), (4, 3)]
        assert [p.shape for p in checks["max_pool_stride2"][1]] == [(7, 3)]
        assert [p.shape for p in checks["layer_norm"][1]] == [(4, 6), (6,), (6,)]
        for name, (forward, _) in checks.items():
            with no_grad():
                assert forward().data.size == 1, name

    def test_loss_checks_leave_out_bin_shift_biases(self):
        checks = build_checks(0)
        trident = {p.name for p in checks["total_loss"][1]}
        assert "head.center.2.w" in trident
        assert not {"head.start.2.b", "head.end.2.b"} & trident
        plain = {p.name for p in checks["total_loss_plain_head"][1]}
        assert "head.reg.2.b" in plain
        heads = {p.name for p in checks["trident_heads"][1]}
        assert {"head.start.2.b", "head.end.2.b"} <= heads

    def test_checked_points_keep_clear_of_kinks(self):
        h = 1e-5
        for name, (forward, _) in build_checks(2, h).items():
            assert kink_margin(forward()) > KINK_MARGIN_STEPS * h, name

    def test_same_seed_builds_same_problems(self):
        first, second = build_checks(4), build_checks(4)
        with no_grad():
            for name in CHECKS:
                assert first[name][0]().item() == second[name][0]().item()


@pytest.mark.unit
class TestWellPosed:
    def test_redraws_until_clear_of_kinks(self):
        draws = []

        def builder(rng):
            x = Parameter(np.array([0.0 if not draws else 1.0]), "x")
            draws.append(x)
            return (lambda: relu(x).sum()), [x]

        forward, params = well_posed(builder, np.random.default_rng(0))
        assert len(draws) == 2
        assert params[0].data[0] == 1.0

    def test_gives_up_after_max_draws(self):
        calls = []

        def builder(rng):
            calls.append(1)
            x = Parameter(np.zeros(2), "x")
            return (lambda: relu(x).sum()), [x]

        with pytest.raises(NumericError) as excinfo:
            well_posed(builder, np.random.default_rng(0))
        assert excinfo.value.error_code == "NO_WELL_POSED_DRAW"
        assert len(calls) == MAX_DRAWS


@pytest.mark.slow
@pytest.mark.integration
class TestSuite:
    def test_full_suite_passes_at_default_tolerance(self):
        table = run_gradcheck_suite()
        assert list(table.columns) == ["block", "worst_error", "tolerance", "passed"]
        assert list(table["block"]) == list(CHECKS)
        assert (table["tolerance"] == 1e-4).all()
        assert table["passed"].all(), table.to_string()
        assert table["worst_error"].max() < 1e-4

    @pytest.mark.parametrize("seed", [1, 2])
    def test_sampled_suite_passes_for_other_seeds(self, seed):
        table = run_gradcheck_suite(seed=seed, max_entries=6)
        assert table["passed"].all(), table.to_string()

    def test_tolerance_zero_fails_everything_nonzero(self):
        table = run_gradcheck_suite(tolerance=0.0, seed=1, max_entries=2)
        assert len(table) == len(CHECKS)
        assert not table.loc[table["worst_error"] > 0.0, "passed"].any()
        assert (table["worst_error"] < 1e-4).all()


@pytest.mark.unit
class TestGradientFloor:
    def test_tiny_nonzero_gradient_is_redrawn(self):
        scales = iter([1e-9, 1.0])

        def builder(rng):
            x = Parameter(np.array([0.5, 2.0]), "x")
            scale = next(scales)
            return (lambda: (x * np.array([scale, 1.0])).sum()), [x]

        forward, params = well_posed(builder, np.random.default_rng(0))
        assert forward().item() == pytest.approx(2.5)
        assert not np.any(params[0].grad)

    def test_exact_zero_gradient_is_accepted(self):
        def builder(rng):
            x = Parameter(np.array([-1.0, 2.0]), "x")
            return (lambda: relu(x).sum()), [x]

        forward, params = well_posed(builder, np.random.default_rng(0))
        assert forward().item() == 2.0
