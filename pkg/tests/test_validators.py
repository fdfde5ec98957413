"""Tests for the input validators."""

import numpy as np
import pytest

from utils.validators import (
    ValidationResult,
    similar_names,
    summarize_results,
    validate_config_fields,
    validate_groups,
    validate_odd_window,
    validate_segment,
    validate_stochastic_rows,
)


@pytest.mark.unit
class TestValidators:
    def test_result_truthiness(self):
        assert ValidationResult(True)
        assert not ValidationResult(False, "no")

    @pytest.mark.parametrize("window,ok", [(1, True), (3, True), (2, False), (0, False), (-1, False), (3.0, False), (True, False)])
    def test_odd_window(self, window, ok):
        assert bool(validate_odd_window(window)) is ok

    def test_groups(self):
        assert validate_groups(64, 4)
        assert not validate_groups(6, 4)
        assert not validate_groups(6, 0)

    def test_segment(self):
        assert validate_segment(0.0, 1.0)
        assert not validate_segment(1.0, 1.0)
        assert not validate_segment(-0.5, 1.0)
        assert not validate_segment(0.0, float("nan"))
        assert not validate_segment(0.0, 11.0, num_instants=10)

    def test_stochastic_rows_name_the_row(self):
        result = validate_stochastic_rows(np.array([[0.5, 0.5], [0.2, 0.7]]))
        assert not result
        assert "Row 1" in result.message

    def test_stochastic_rows_tolerance(self):
        assert validate_stochastic_rows(np.array([[0.5, 0.5 + 1e-13]]))
        assert not validate_stochastic_rows(np.array([[0.5, 0.5 + 1e-10]]))

    def test_config_fields_accept_ints_for_floats(self):
        assert validate_config_fields({"lr": 1}, {"lr": float})

    def test_config_fields_reject_bool_for_int(self):
        assert not validate_config_fields({"epochs": True}, {"epochs": int})

    def test_config_unknown_key_suggests_fields(self):
        result = validate_config_fields({"lrr": 1}, {"lr": float, "epochs": int})
        assert not result
        assert result.suggestions == ["lr"]
        assert "did you mean lr?" in result.message

    @pytest.mark.parametrize(
        "typo,expected",
        [("num_bin", "num_bins"), ("warmup_epoch", "warmup_epochs"), ("sgp_windw", "sgp_window"), ("LR", "lr")],
    )
    def test_similar_names_finds_the_intended_field(self, typo, expected):
        fields = ["epochs", "lr", "num_bins", "num_levels", "sgp_scale", "sgp_window", "warmup_epochs"]
        assert expected in similar_names(typo, fields)

    def test_similar_names_ignores_unrelated_fields(self):
        assert similar_names("colour", ["epochs", "lr", "num_bins"]) == []

    def test_unknown_key_without_close_match_has_no_hint(self):
        result = validate_config_fields({"colour": 1}, {"lr": float, "epochs": int})
        assert result.suggestions == []
        assert result.message == "config.colour: unknown field"

    def test_summarize_keeps_only_failures(self):
        failures = summarize_results({"a": ValidationResult(True), "b": ValidationResult(False, "bad")})
        assert failures == ["b: bad"]
