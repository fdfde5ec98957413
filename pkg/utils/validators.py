"""
Input validation functions for the TriDet detector.

Validators return a ValidationResult instead of raising so callers decide
which exception (and which error code) a failure maps to.
"""

import difflib
import math
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np


class ValidationResult:
    """Result of a validation operation."""

    def __init__(self, is_valid: bool, message: str = "", suggestions: Optional[List[str]] = None):
        self.is_valid = is_valid
        self.message = message
        self.suggestions = suggestions or []

    def __bool__(self) -> bool:
        return self.is_valid


def validate_odd_window(window: int) -> ValidationResult:
    """
    Validate a depthwise convolution window size.

    Args:
        window: Window size in instants

    Returns:
        ValidationResult with validation status and message
    """
    if not isinstance(window, (int, np.integer)) or isinstance(window, bool):
        return ValidationResult(False, f"Window must be an integer, got {window!r}")
    if window < 1:
        return ValidationResult(False, f"Window must be >= 1, got {window}")
    if window % 2 == 0:
        return ValidationResult(False, f"Window must be odd, got {window}")
    return ValidationResult(True, "Valid window")


def validate_groups(channels: int, groups: int) -> ValidationResult:
    """Validate that a group count divides the channel dimension."""
    if groups < 1:
        return ValidationResult(False, f"Group count must be >= 1, got {groups}")
    if channels % groups != 0:
        return ValidationResult(False, f"Channel dim {channels} is not divisible by {groups} groups")
    return ValidationResult(True, "Valid groups")


def validate_segment(start: float, end: float, num_instants: Optional[float] = None) -> ValidationResult:
    """
    Validate an action segment in instant coordinates.

    Args:
        start: Segment start
        end: Segment end
        num_instants: Optional sequence length the segment must fit into

    Returns:
        ValidationResult with validation status and message
    """
    if not (math.isfinite(start) and math.isfinite(end)):
        return ValidationResult(False, "Segment bounds must be finite")
    if end <= start:
        return ValidationResult(False, f"Segment end {end} must exceed start {start}")
    if start < 0:
        return ValidationResult(False, f"Segment start {start} is negative")
    if num_instants is not None and end > num_instants:
        return ValidationResult(False, f"Segment end {end} exceeds sequence length {num_instants}")
    return ValidationResult(True, "Valid segment")


def validate_stochastic_rows(weights: np.ndarray, tol: float = 1e-12) -> ValidationResult:
    """
    Validate that every row of a matrix is a probability vector.

    Args:
        weights: 2-D weight matrix
        tol: Allowed deviation of each row sum from 1

    Returns:
        ValidationResult naming the first offending row
    """
    if weights.ndim != 2:
        return ValidationResult(False, f"Weights must be 2-D, got shape {weights.shape}")
    for i, row in enumerate(weights):
        if not np.all(np.isfinite(row)):
            return ValidationResult(False, f"Row {i} has non-finite weights")
        if np.any(row < 0):
            return ValidationResult(False, f"Row {i} has negative weights")
        if abs(float(row.sum()) - 1.0) > tol:
            return ValidationResult(False, f"Row {i} sums to {float(row.sum())!r}, not 1")
    return ValidationResult(True, "Valid stochastic matrix")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def validate_annotation_data(data: Any) -> ValidationResult:
    """
    Validate a parsed annotation document.

    The message names the offending field path, e.g.
    ``videos[3].segments[1]: end 4.0 must exceed start 9.0``.

    Args:
        data: Parsed JSON document

    Returns:
        ValidationResult with validation status and message
    """
    if not isinstance(data, Mapping):
        return ValidationResult(False, "<root>: expected an object")
    num_classes = data.get("num_classes")
    if not _is_int(num_classes) or num_classes < 1:
        return ValidationResult(False, f"num_classes: expected a positive integer, got {num_classes!r}")
    videos = data.get("videos")
    if not isinstance(videos, list):
        return ValidationResult(False, "videos: expected a list")

    seen_ids = set()
    for vi, video in enumerate(videos):
        path = f"videos[{vi}]"
        if not isinstance(video, Mapping):
            return ValidationResult(False, f"{path}: expected an object")
        video_id = video.get("video_id")
        if not isinstance(video_id, str) or not video_id:
            return ValidationResult(False, f"{path}.video_id: expected a non-empty string")
        if video_id in seen_ids:
            return ValidationResult(False, f"{path}.video_id: duplicate id {video_id!r}")
        seen_ids.add(video_id)
        num_instants = video.get("num_instants")
        if not _is_int(num_instants) or num_instants < 1:
            return ValidationResult(False, f"{path}.num_instants: expected a positive integer")
        segments = video.get("segments")
        if not isinstance(segments, list):
            return ValidationResult(False, f"{path}.segments: expected a list")
        for si, seg in enumerate(segments):
            seg_path = f"{path}.segments[{si}]"
            if not isinstance(seg, Mapping):
                return ValidationResult(False, f"{seg_path}: expected an object")
            start, end, label = seg.get("start"), seg.get("end"), seg.get("label")
            if not (_is_number(start) and _is_number(end)):
                return ValidationResult(False, f"{seg_path}: start/end must be numbers")
            check = validate_segment(float(start), float(end), num_instants)
            if not check:
                return ValidationResult(False, f"{seg_path}: {check.message}")
            if not _is_int(label) or not 0 <= label < num_classes:
                return ValidationResult(False, f"{seg_path}.label: expected an integer in [0, {num_classes})")
    return ValidationResult(True, "Valid annotation data")


def similar_names(name: str, candidates: Iterable[str], limit: int = 5) -> List[str]:
    """Known names that contain, are contained in, or closely resemble ``name``."""
    lowered = name.lower()
    known = sorted(candidates)
    suggestions = [c for c in known if lowered in c.lower() or c.lower() in lowered]
    for match in difflib.get_close_matches(name, known, n=limit, cutoff=0.6):
        if match not in suggestions:
            suggestions.append(match)
    return suggestions[:limit]


def validate_config_fields(
    data: Mapping[str, Any],
    schema: Mapping[str, type],
    positive: Sequence[str] = (),
    non_negative: Sequence[str] = (),
    unit_interval: Sequence[str] = (),
) -> ValidationResult:
    """
    Validate a run-configuration mapping against a field -> type schema.

    Args:
        data: Parsed configuration mapping (partial; missing keys take defaults)
        schema: Allowed keys and their expected python types
        positive: Keys whose value must be > 0
        non_negative: Keys whose value must be >= 0
        unit_interval: Keys whose value must lie in [0, 1)

    Returns:
        ValidationResult naming the offending key path
    """
    for key, value in data.items():
        if key not in schema:
            suggestions = similar_names(str(key), schema)
            hint = f" (did you mean {', '.join(suggestions)}?)" if suggestions else ""
            return ValidationResult(False, f"config.{key}: unknown field{hint}", suggestions=suggestions)
        expected = schema[key]
        if value is None:
            continue
        if expected is float:
            ok = _is_number(value)
        elif expected is int:
            ok = _is_int(value)
        elif expected is bool:
            ok = isinstance(value, bool)
        elif expected is list:
            ok = isinstance(value, list)
        else:
            ok = isinstance(value, expected)
        if not ok:
            return ValidationResult(False, f"config.{key}: expected {expected.__name__}, got {type(value).__name__}")
        if key in positive and not value > 0:
            return ValidationResult(False, f"config.{key}: must be positive, got {value}")
        if key in non_negative and not value >= 0:
            return ValidationResult(False, f"config.{key}: must be non-negative, got {value}")
        if key in unit_interval and not 0 <= value < 1:
            return ValidationResult(False, f"config.{key}: must lie in [0, 1), got {value}")
    return ValidationResult(True, "Valid configuration")


def summarize_results(results: Dict[str, ValidationResult]) -> List[str]:
    """Collect the messages of failed validations, in key order."""
    return [f"{name}: {res.message}" for name, res in results.items() if not res.is_valid]
