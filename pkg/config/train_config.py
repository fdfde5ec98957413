"""
Run configuration for training, detection and evaluation.

A single dataclass holds every architecture and optimisation hyperparameter.
It is read from JSON (every field optional), validated before any run, and
echoed canonically into checkpoints.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from loguru import logger

from config.settings import get_settings
from utils.exceptions import ConfigurationError
from utils.validators import (
    ValidationResult,
    summarize_results,
    validate_config_fields,
    validate_groups,
    validate_odd_window,
)


@dataclass(frozen=True)
class TrainConfig:
    """All architecture, loss, optimiser and inference hyperparameters."""

    # architecture
    num_bins: int = 16
    sgp_window: int = 1
    sgp_scale: float = 1.5
    num_levels: int = 6
    embed_dim: int = 64
    input_dim: int = 32
    num_classes: int = 3
    ffn_ratio: int = 4
    gn_groups: int = 4
    block_type: str = "sgp"
    use_trident_head: bool = True
    detach_boundary: bool = True
    boundary_init_std: float = 0.1
    cls_prior_prob: float = 0.01
    # optimisation
    lr: float = 1e-4
    weight_decay: float = 0.05
    epochs: int = 40
    warmup_epochs: int = 5
    batch_size: int = 2
    max_seq_len: int = 256
    seed: int = 0
    # assignment and loss
    center_radius: float = 1.5
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    iou_weight_power: float = 1.0
    # inference
    score_threshold: float = 0.01
    nms_sigma: float = 0.5
    nms_min_score: float = 1e-3
    max_detections: int = 200
    iou_thresholds: List[float] = field(default_factory=lambda: [0.3, 0.4, 0.5, 0.6, 0.7])
    # paths
    annotations: Optional[str] = None
    feature_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    loss_log: Optional[str] = None

    @property
    def kw_window(self) -> int:
        """Window of the scaled depthwise convolution."""
        return round_to_odd(self.sgp_scale * self.sgp_window)

    @property
    def top_level_reach(self) -> int:
        """Largest offset (input instants) the top level can regress on either side of an instant."""
        return self.num_bins * 2 ** (self.num_levels - 1)

    def validate(self) -> None:
        """
        Check cross-field constraints.

        Raises:
            ConfigurationError: If any constraint is violated
        """
        checks: Dict[str, ValidationResult] = {
            "sgp_window": validate_odd_window(self.sgp_window),
            "gn_groups": validate_groups(self.embed_dim, self.gn_groups),
        }
        if self.block_type not in ("sgp", "conv"):
            checks["block_type"] = ValidationResult(False, f"unknown block type {self.block_type!r}")
        if self.sgp_scale < 1:
            checks["sgp_scale"] = ValidationResult(False, f"must be >= 1, got {self.sgp_scale}")
        if self.warmup_epochs > self.epochs:
            checks["warmup_epochs"] = ValidationResult(False, "cannot exceed epochs")
        if not 0 < self.cls_prior_prob < 1:
            checks["cls_prior_prob"] = ValidationResult(False, "must lie in (0, 1)")
        if not self.iou_thresholds or not all(0 < t < 1 for t in self.iou_thresholds):
            checks["iou_thresholds"] = ValidationResult(False, "must be a non-empty list of values in (0, 1)")
        failures = summarize_results(checks)
        if failures:
            raise ConfigurationError(
                f"Invalid configuration: {'; '.join(failures)}",
                error_code="CONFIG_INVALID",
                details={"failures": failures},
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        """Canonical JSON echo (sorted keys, no whitespace variance)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_overrides(self, **overrides: Any) -> "TrainConfig":
        cfg = replace(self, **overrides)
        cfg.validate()
        return cfg


_FIELD_TYPES = {
    "num_bins": int, "sgp_window": int, "sgp_scale": float, "num_levels": int, "embed_dim": int,
    "input_dim": int, "num_classes": int, "ffn_ratio": int, "gn_groups": int, "block_type": str,
    "use_trident_head": bool, "detach_boundary": bool, "boundary_init_std": float,
    "cls_prior_prob": float, "lr": float, "weight_decay": float, "epochs": int,
    "warmup_epochs": int, "batch_size": int, "max_seq_len": int, "seed": int,
    "center_radius": float, "focal_alpha": float, "focal_gamma": float,
    "iou_weight_power": float, "score_threshold": float, "nms_sigma": float,
    "nms_min_score": float, "max_detections": int, "iou_thresholds": list,
    "annotations": str, "feature_dir": str, "checkpoint": str, "loss_log": str,
}

_POSITIVE = (
    "num_bins", "sgp_window", "sgp_scale", "num_levels", "embed_dim", "input_dim", "num_classes",
    "ffn_ratio", "gn_groups", "boundary_init_std", "lr", "epochs", "batch_size", "max_seq_len",
    "center_radius", "nms_sigma", "max_detections",
)
_NON_NEGATIVE = ("weight_decay", "warmup_epochs", "seed", "focal_gamma", "iou_weight_power", "nms_min_score")
_UNIT_INTERVAL = ("focal_alpha", "score_threshold")

assert set(_FIELD_TYPES) == {f.name for f in fields(TrainConfig)}


def round_to_odd(value: float) -> int:
    """Round half up, then bump an even result up to the next odd integer."""
    rounded = int(math.floor(value + 0.5))
    return rounded + 1 if rounded % 2 == 0 else rounded


def config_from_dict(data: Dict[str, Any], apply_env: bool = True) -> TrainConfig:
    """
    Build a validated configuration from a (partial) mapping.

    Args:
        data: Field overrides; missing fields take their defaults
        apply_env: Apply the TRIDET_SEED override from the environment

    Returns:
        Validated TrainConfig

    Raises:
        ConfigurationError: On unknown keys, wrong types or invalid values
    """
    check = validate_config_fields(data, _FIELD_TYPES, _POSITIVE, _NON_NEGATIVE, _UNIT_INTERVAL)
    if not check:
        raise ConfigurationError(check.message, error_code="CONFIG_SCHEMA", details={"suggestions": check.suggestions})
    values = {k: v for k, v in data.items() if v is not None}
    for key in ("sgp_scale", "boundary_init_std", "cls_prior_prob", "lr", "weight_decay", "center_radius",
                "focal_alpha", "focal_gamma", "iou_weight_power", "score_threshold", "nms_sigma", "nms_min_score"):
        if key in values:
            values[key] = float(values[key])
    if "iou_thresholds" in values:
        values["iou_thresholds"] = [float(t) for t in values["iou_thresholds"]]
    if apply_env:
        seed = get_settings().SEED
        if seed is not None:
            logger.info(f"TRIDET_SEED overrides config seed with {seed}")
            values["seed"] = seed
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def read_config_data(path: Optional[Union[str, Path]]) -> Dict[str, Any]:
    """
    Parse a run-configuration file without validating it; an absent path gives an empty mapping.

    Raises:
        ConfigurationError: If the file is unreadable or not a JSON object
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {path}", error_code="CONFIG_MISSING")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}", error_code="CONFIG_JSON")
        if not isinstance(data, dict):
            raise ConfigurationError("config: expected a JSON object", error_code="CONFIG_SCHEMA")
    return data


def load_config(path: Optional[Union[str, Path]], apply_env: bool = True, **overrides: Any) -> TrainConfig:
    """
    Load a run configuration from JSON, falling back to defaults when no path is given.

    Raises:
        ConfigurationError: If the file is unreadable, not JSON or fails validation
    """
    data = read_config_data(path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data, apply_env=apply_env)
