"""Tests for the synthetic dataset generator."""

import json

import numpy as np
import pytest

from components.synthetic_data import (
    class_template,
    generate_synthetic,
    nearest_template_label,
    write_synthetic,
)
from utils.exceptions import ConfigurationError, GenerationError


@pytest.mark.unit
class TestGenerateSynthetic:
    def test_zero_density_gives_background_only(self):
        dataset = generate_synthetic(3, 64, 2, density=0.0, noise_std=1.0, seed=0, feature_dim=4)
        assert all(not v.segments for v in dataset.annotations.videos)
        assert [s.features.shape for s in dataset.samples] == [(64, 4)] * 3

    def test_ids_and_class_count(self):
        dataset = generate_synthetic(2, 32, 3, 1.0, 0.5, seed=1, feature_dim=2, id_prefix="clip")
        assert [s.video_id for s in dataset.samples] == ["clip_0000", "clip_0001"]
        assert dataset.annotations.num_classes == 3

    def test_same_seed_same_dataset(self):
        a = generate_synthetic(4, 128, 3, 3.0, 1.0, seed=7, feature_dim=8)
        b = generate_synthetic(4, 128, 3, 3.0, 1.0, seed=7, feature_dim=8)
        for x, y in zip(a.samples, b.samples):
            np.testing.assert_array_equal(x.features, y.features)
            assert x.segments == y.segments

    def test_segments_are_separated_and_in_range(self):
        T = 256
        dataset = generate_synthetic(30, T, 4, 6.0, 1.0, seed=2, feature_dim=4)
        for video in dataset.annotations.videos:
            segments = sorted(video.segments, key=lambda s: s.start)
            for seg in segments:
                assert 0.0 <= seg.start < seg.end <= T
                assert T // 32 <= seg.length <= T // 4
                assert 0 <= seg.label < 4
            for prev, nxt in zip(segments, segments[1:]):
                assert nxt.start >= prev.end + 1.0

    def test_clean_segments_match_their_class_template(self):
        dataset = generate_synthetic(20, 128, 5, 3.0, 0.0, seed=3, feature_dim=16)
        checked = 0
        for sample in dataset.samples:
            for seg in sample.segments:
                block = sample.features[int(seg.start):int(seg.end)]
                assert nearest_template_label(block, 5) == seg.label
                checked += 1
        assert checked >= 20

    def test_template_is_deterministic(self):
        np.testing.assert_array_equal(class_template(2, 10, 6), class_template(2, 10, 6))
        assert not np.allclose(class_template(0, 10, 6), class_template(1, 10, 6))

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(num_instants=31, num_classes=2),
            dict(num_instants=64, num_classes=0),
            dict(num_instants=64, num_classes=2, density=-1.0),
        ],
    )
    def test_rejects_bad_arguments(self, kwargs):
        args = dict(num_videos=1, density=1.0, noise_std=1.0, seed=0)
        args.update(kwargs)
        with pytest.raises(ConfigurationError) as exc:
            generate_synthetic(**args)
        assert exc.value.error_code == "BAD_SYNTH_ARGS"

    def test_infeasible_density(self):
        with pytest.raises(GenerationError) as exc:
            generate_synthetic(1, 32, 2, density=1000.0, noise_std=1.0, seed=0)
        assert exc.value.error_code == "INFEASIBLE_DENSITY"
        assert exc.value.details["capacity"] == 16


@pytest.mark.integration
class TestWriteSynthetic:
    def test_layout(self, processor, tmp_path):
        dataset = generate_synthetic(2, 32, 2, 1.0, 0.5, seed=0, feature_dim=3)
        path = write_synthetic(dataset, "synthetic", processor)
        assert path == tmp_path / "synthetic" / "annotations.json"
        doc = json.loads(path.read_text())
        assert [v["video_id"] for v in doc["videos"]] == ["video_0000", "video_0001"]
        for sample in dataset.samples:
            features = processor.read_features(tmp_path / "synthetic" / "features" / f"{sample.video_id}.tdft")
            np.testing.assert_array_equal(features, sample.features.astype(np.float32))

    def test_written_files_are_byte_identical_across_runs(self, processor, tmp_path):
        for name in ("a", "b"):
            write_synthetic(generate_synthetic(3, 64, 2, 2.0, 1.0, seed=11, feature_dim=4), name, processor)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
