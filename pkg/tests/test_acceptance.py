"""Desk-scale learning runs on the synthetic dataset (set TRIDET_RUN_ACCEPTANCE=1)."""

import statistics

import pytest

from components.inference_eval import detect, mean_ap
from components.synthetic_data import generate_synthetic
from components.training import train
from config.train_config import TrainConfig
from utils.data_processor import AnnotationSet

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def _split(seed: int):
    dataset = generate_synthetic(250, 256, 3, density=3.0, noise_std=1.0, seed=seed, feature_dim=32)
    train_set, test_set = dataset.samples[:200], dataset.samples[200:]
    test_ann = AnnotationSet(dataset.annotations.videos[200:], dataset.annotations.num_classes)
    return train_set, test_set, test_ann


def _fit_and_score(cfg: TrainConfig, train_set, test_set, test_ann):
    model = train(train_set, cfg).model
    detections = []
    for sample in test_set:
        detections.extend(detect(model, sample.features, sample.video_id, cfg))
    return mean_ap(detections, test_ann, cfg.iou_thresholds)


def _config(**overrides) -> TrainConfig:
    base = dict(
        num_bins=16, sgp_window=1, sgp_scale=1.5, num_levels=6, input_dim=32, num_classes=3,
        lr=1e-3, epochs=30, warmup_epochs=3, max_seq_len=256, seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_end_to_end_average_map():
    report = _fit_and_score(_config(), *_split(seed=0))
    assert report.average_map >= 0.5


def test_trident_head_matches_or_beats_plain_regression_at_high_iou():
    train_set, test_set, test_ann = _split(seed=0)
    trident, plain = [], []
    for seed in (0, 1, 2):
        trident.append(_fit_and_score(_config(seed=seed), train_set, test_set, test_ann).map_per_threshold[0.7])
        plain.append(
            _fit_and_score(_config(seed=seed, use_trident_head=False), train_set, test_set, test_ann)
            .map_per_threshold[0.7]
        )
    assert statistics.median(trident) >= statistics.median(plain)
