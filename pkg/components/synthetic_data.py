"""
Synthetic temporal action dataset.

Background instants are Gaussian noise. Each action adds a deterministic
class template to the noise: a class-specific direction scaled by an onset
ramp, plus a second direction modulated at a class-specific frequency.
Segments never overlap and are separated by at least one instant.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from utils.data_processor import (
    ActionSegment,
    AnnotationSet,
    DataProcessor,
    PathLike,
    VideoAnnotation,
    VideoSample,
)
from utils.exceptions import ConfigurationError, GenerationError

TEMPLATE_SEED_BASE = 10000
MAX_COUNT_DRAWS = 10


@dataclass
class SyntheticDataset:
    samples: List[VideoSample]
    annotations: AnnotationSet


def class_template(label: int, length: int, dim: int) -> np.ndarray:
    """[length, dim] pattern of class ``label``; identical for every call with the same arguments."""
    rng = np.random.default_rng(TEMPLATE_SEED_BASE + label)
    main = rng.normal(size=dim)
    main *= np.sqrt(dim) / np.linalg.norm(main)
    wave = rng.normal(size=dim)
    wave *= np.sqrt(dim) / np.linalg.norm(wave)
    i = np.arange(length, dtype=np.float64)
    ramp = max(1.0, length / 8.0)
    envelope = np.minimum(1.0, np.minimum((i + 1.0) / ramp, (length - i) / ramp))
    amplitude = 1.0 + 0.25 * label
    phase = 2.0 * np.pi * (label + 1) * (i + 0.5) / length
    return envelope[:, None] * (amplitude * main[None, :] + 0.5 * np.sin(phase)[:, None] * wave[None, :])


def nearest_template_label(features: np.ndarray, num_classes: int) -> int:
    """Class whose template is closest (Euclidean) to a [length, dim] feature block."""
    length, dim = features.shape
    distances = [np.linalg.norm(features - class_template(c, length, dim)) for c in range(num_classes)]
    return int(np.argmin(distances))


def _segment_lengths(count: int, T: int, rng: np.random.Generator) -> List[int]:
    lo, hi = max(1, T // 32), max(1, T // 4)
    lengths = []
    budget = T - (count - 1)
    for k in range(count):
        # leave room for the remaining segments at their minimum length
        cap = min(hi, budget - lo * (count - k - 1))
        length = int(rng.integers(lo, cap + 1))
        lengths.append(length)
        budget -= length
    rng.shuffle(lengths)
    return lengths


def _layout(count: int, T: int, rng: np.random.Generator) -> List[Tuple[int, int]]:
    lengths = _segment_lengths(count, T, rng)
    free = T - sum(lengths) - (count - 1)
    cuts = np.sort(rng.integers(0, free + 1, size=count))
    gaps = np.diff(np.concatenate([[0], cuts]))
    segments, cursor = [], 0
    for gap, length in zip(gaps, lengths):
        cursor += int(gap)
        segments.append((cursor, cursor + length))
        cursor += length + 1
    return segments


def generate_synthetic(
    num_videos: int,
    num_instants: int,
    num_classes: int,
    density: float,
    noise_std: float,
    seed: int,
    feature_dim: int = 32,
    id_prefix: str = "video",
) -> SyntheticDataset:
    """
    Generate videos with non-overlapping template actions.

    Args:
        num_videos: Number of videos
        num_instants: Length T of every video (>= 32)
        num_classes: Number of action classes C (>= 1)
        density: Expected actions per video (Poisson mean)
        noise_std: Standard deviation of the background noise
        seed: Seed; equal seeds give identical datasets
        feature_dim: Channel count of the features

    Raises:
        ConfigurationError: On out-of-range arguments
        GenerationError: If the drawn action counts cannot fit after bounded retries
    """
    if num_classes < 1 or num_instants < 32 or num_videos < 0 or density < 0 or noise_std < 0 or feature_dim < 1:
        raise ConfigurationError(
            f"generate_synthetic: need C >= 1, T >= 32 and non-negative sizes "
            f"(got C={num_classes}, T={num_instants}, videos={num_videos}, density={density})",
            error_code="BAD_SYNTH_ARGS",
        )
    rng = np.random.default_rng(seed)
    min_len = max(1, num_instants // 32)
    capacity = (num_instants + 1) // (min_len + 1)
    samples: List[VideoSample] = []
    videos: List[VideoAnnotation] = []
    for v in range(num_videos):
        video_id = f"{id_prefix}_{v:04d}"
        for _ in range(MAX_COUNT_DRAWS):
            count = int(rng.poisson(density))
            if count <= capacity:
                break
        else:
            raise GenerationError(
                f"{video_id}: density {density} cannot place non-overlapping actions in {num_instants} instants",
                error_code="INFEASIBLE_DENSITY",
                details={"density": density, "capacity": capacity},
            )
        features = rng.normal(0.0, noise_std, size=(num_instants, feature_dim))
        segments = []
        for s, e in (_layout(count, num_instants, rng) if count else []):
            label = int(rng.integers(num_classes))
            features[s:e] += class_template(label, e - s, feature_dim)
            segments.append(ActionSegment(float(s), float(e), label))
        samples.append(VideoSample(video_id, features, segments))
        videos.append(VideoAnnotation(video_id, num_instants, list(segments)))
    logger.info(
        f"Generated {num_videos} videos ({sum(len(v.segments) for v in videos)} actions, {num_classes} classes)"
    )
    return SyntheticDataset(samples, AnnotationSet(videos, num_classes))


def write_synthetic(
    dataset: SyntheticDataset,
    out_dir: PathLike,
    processor: Optional[DataProcessor] = None,
    annotations_name: str = "annotations.json",
) -> Path:
    """Write ``annotations.json`` and ``features/<video_id>.tdft`` under ``out_dir``."""
    processor = processor or DataProcessor()
    root = processor.resolve(out_dir)
    for sample in dataset.samples:
        processor.write_features(root / "features" / f"{sample.video_id}.tdft", sample.features)
    return processor.save_annotations(root / annotations_name, dataset.annotations)
