"""
Data records and file formats for the TriDet detector.

This module holds the record dataclasses shared across the package and
every on-disk format: binary feature files, JSON annotations, binary
checkpoints, JSON-lines detections, evaluation reports and CSV tables.
Every write goes through a temporary file that replaces the target only
once it is complete, so a failed command never leaves partial output.
"""

import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from config.settings import get_settings
from utils.exceptions import AnnotationError, DataValidationError, FormatError, StorageError
from utils.validators import validate_annotation_data, validate_segment

FEATURE_MAGIC = b"TDFT"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"TDCK"
CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class ActionSegment:
    """An action instance in instant coordinates."""
    start: float
    end: float
    label: int
    score: Optional[float] = None

    def __post_init__(self):
        check = validate_segment(float(self.start), float(self.end))
        if not check:
            raise DataValidationError(
                f"Malformed segment: {check.message}",
                error_code="BAD_SEGMENT",
                details={"start": self.start, "end": self.end},
            )

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass
class VideoAnnotation:
    """Ground truth of one video."""
    video_id: str
    num_instants: int
    segments: List[ActionSegment] = field(default_factory=list)


@dataclass
class AnnotationSet:
    """The contents of an annotation file."""
    videos: List[VideoAnnotation]
    num_classes: int

    def by_id(self) -> Dict[str, VideoAnnotation]:
        return {v.video_id: v for v in self.videos}


@dataclass
class VideoSample:
    """Features of one video together with its ground truth."""
    video_id: str
    features: np.ndarray
    segments: List[ActionSegment] = field(default_factory=list)

    @property
    def num_instants(self) -> int:
        return int(self.features.shape[0])


@dataclass
class Detection:
    """A scored detection produced at inference time."""
    video_id: str
    start: float
    end: float
    label: int
    score: float


# ---------------------------------------------------------------- feature files
def encode_features(features: np.ndarray) -> bytes:
    """
    Serialize a [T, D] feature matrix as a TDFT file.

    Raises:
        DataValidationError: If the matrix is not 2-D or holds non-finite values
    """
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise DataValidationError(f"Features must be 2-D, got shape {arr.shape}", error_code="BAD_FEATURES")
    values = arr.astype("<f4")
    if not np.all(np.isfinite(values)):
        raise DataValidationError("Features contain non-finite values", error_code="BAD_FEATURES")
    T, D = arr.shape
    return FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, T, D) + values.tobytes(order="C")


def decode_features(blob: bytes) -> np.ndarray:
    """
    Parse a TDFT file into a float64 [T, D] matrix.

    Raises:
        FormatError: On bad magic, version, or length; ``details["offset"]`` is the byte offset
    """
    if len(blob) < 16:
        raise FormatError("Feature file truncated inside header", error_code="TRUNCATED", details={"offset": len(blob)})
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"Bad feature magic {blob[:4]!r}", error_code="BAD_MAGIC", details={"offset": 0})
    version, T, D = struct.unpack_from("<III", blob, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"Unsupported feature version {version}", error_code="BAD_VERSION", details={"offset": 4})
    expected = 16 + 4 * T * D
    if len(blob) != expected:
        raise FormatError(
            f"Feature file length {len(blob)} does not match header shape {T}x{D} (expected {expected})",
            error_code="BAD_LENGTH",
            details={"offset": min(len(blob), expected)},
        )
    values = np.frombuffer(blob, dtype="<f4", offset=16).reshape(T, D)
    if not np.all(np.isfinite(values)):
        raise FormatError("Feature file holds non-finite values", error_code="NON_FINITE", details={"offset": 16})
    return values.astype(np.float64)


# ------------------------------------------------------------------ checkpoints
def encode_checkpoint(config_json: str, params: Mapping[str, np.ndarray]) -> bytes:
    """Serialize a config echo and named float64 parameter blobs."""
    cfg = config_json.encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> Tuple[str, "OrderedDict[str, np.ndarray]"]:
    """
    Parse a checkpoint into (config JSON, ordered parameter arrays).

    Raises:
        FormatError: On any header, shape or truncation problem, naming the byte offset
    """
    offset = 0

    def need(n: int, what: str) -> None:
        if offset + n > len(blob):
            raise FormatError(
                f"Checkpoint truncated while reading {what}",
                error_code="TRUNCATED",
                details={"offset": offset},
            )

    def read_u32(what: str) -> int:
        nonlocal offset
        need(4, what)
        (value,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        return value

    need(4, "magic")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"Bad checkpoint magic {blob[:4]!r}", error_code="BAD_MAGIC", details={"offset": 0})
    offset = 4
    version = read_u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}", error_code="BAD_VERSION", details={"offset": 4})
    cfg_len = read_u32("config length")
    need(cfg_len, "config")
    try:
        config_json = blob[offset:offset + cfg_len].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("Checkpoint config is not UTF-8", error_code="BAD_CONFIG", details={"offset": offset})
    offset += cfg_len
    count = read_u32("parameter count")
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        name_len = read_u32("name length")
        need(name_len, "name")
        name = blob[offset:offset + name_len].decode("utf-8", errors="replace")
        offset += name_len
        rank = read_u32(f"rank of {name}")
        dims = tuple(read_u32(f"dims of {name}") for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        need(8 * size, f"values of {name}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(dims).astype(np.float64)
        offset += 8 * size
    if offset != len(blob):
        raise FormatError("Trailing bytes after checkpoint", error_code="TRAILING", details={"offset": offset})
    return config_json, params


# ----------------------------------------------------------------- annotations
def annotations_from_dict(data: Any) -> AnnotationSet:
    """
    Build an AnnotationSet from a parsed annotation document.

    Raises:
        AnnotationError: Naming the offending field path
    """
    check = validate_annotation_data(data)
    if not check:
        raise AnnotationError(check.message, error_code="ANNOTATION_SCHEMA")
    videos = [
        VideoAnnotation(
            video_id=v["video_id"],
            num_instants=int(v["num_instants"]),
            segments=[ActionSegment(float(s["start"]), float(s["end"]), int(s["label"])) for s in v["segments"]],
        )
        for v in data["videos"]
    ]
    return AnnotationSet(videos=videos, num_classes=int(data["num_classes"]))


def annotations_to_dict(annotations: AnnotationSet) -> Dict[str, Any]:
    return {
        "num_classes": annotations.num_classes,
        "videos": [
            {
                "video_id": v.video_id,
                "num_instants": v.num_instants,
                "segments": [{"start": s.start, "end": s.end, "label": s.label} for s in v.segments],
            }
            for v in annotations.videos
        ],
    }


def detections_to_lines(detections: Iterable[Detection]) -> str:
    """One JSON object per video, videos in id order, detections in score order."""
    grouped: Dict[str, List[Detection]] = {}
    for det in detections:
        grouped.setdefault(det.video_id, []).append(det)
    lines = []
    for video_id in sorted(grouped):
        dets = sorted(grouped[video_id], key=lambda d: (-d.score, d.start, d.label))
        lines.append(json.dumps({
            "video_id": video_id,
            "detections": [{"start": d.start, "end": d.end, "label": d.label, "score": d.score} for d in dets],
        }, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def detections_from_lines(text: str) -> List[Detection]:
    """
    Parse the detections JSON-lines format.

    Raises:
        DataValidationError: Naming the line and field at fault
    """
    detections: List[Detection] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            video_id = obj["video_id"]
            for di, d in enumerate(obj["detections"]):
                start, end, score = float(d["start"]), float(d["end"]), float(d["score"])
                if end < start or not 0 < score <= 1:
                    raise DataValidationError(
                        f"line {lineno}: detections[{di}] has start > end or score outside (0, 1]",
                        error_code="BAD_DETECTION",
                    )
                detections.append(Detection(str(video_id), start, end, int(d["label"]), score))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataValidationError(f"line {lineno}: malformed detection record ({e})", error_code="BAD_DETECTION")
    return detections


class DataProcessor:
    """
    Reads and writes every file the detector uses.

    All writes are atomic: data goes to a sibling temporary file which
    replaces the target only after the write completed.
    """

    def __init__(self, base_dir: Optional[PathLike] = None):
        """
        Initialize the processor.

        Args:
            base_dir: Directory relative paths are resolved against (defaults to the settings data dir)
        """
        self.base_dir = Path(base_dir) if base_dir is not None else get_settings().DATA_DIRECTORY

    def resolve(self, path: PathLike) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    # ------------------------------------------------------------- raw I/O
    def write_bytes(self, path: PathLike, payload: bytes) -> Path:
        """
        Write bytes atomically.

        Raises:
            StorageError: If the file cannot be written
        """
        target = self.resolve(path)
        temp_path: Optional[Path] = None
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            # temporary name is unique per call
            with tempfile.NamedTemporaryFile(dir=target.parent, prefix=f".{target.name}.", delete=False) as handle:
                temp_path = Path(handle.name)
                handle.write(payload)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(temp_path, target)
        except OSError as e:
            if temp_path is not None and temp_path.exists():
                temp_path.unlink()
            raise StorageError(
                f"Failed to write {target}: {e}",
                error_code="FILE_WRITE_ERROR",
                details={"file": str(target), "error": str(e)},
            )
        return target

    def write_text(self, path: PathLike, text: str) -> Path:
        return self.write_bytes(path, text.encode("utf-8"))

    def read_bytes(self, path: PathLike) -> bytes:
        target = self.resolve(path)
        try:
            return target.read_bytes()
        except OSError as e:
            raise StorageError(
                f"Failed to read {target}: {e}",
                error_code="FILE_READ_ERROR",
                details={"file": str(target), "error": str(e)},
            )

    def load_json_file(self, path: PathLike) -> Any:
        """
        Load JSON data from file.

        Raises:
            DataValidationError: If the file is not valid JSON
        """
        try:
            return json.loads(self.read_bytes(path).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataValidationError(
                f"Corrupted JSON file {path}: {e}",
                error_code="JSON_CORRUPT",
                details={"file": str(path), "error": str(e)},
            )

    def save_json_file(self, path: PathLike, data: Any) -> Path:
        return self.write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")

    # ------------------------------------------------------------ features
    def write_features(self, path: PathLike, features: np.ndarray) -> Path:
        return self.write_bytes(path, encode_features(features))

    def read_features(self, path: PathLike) -> np.ndarray:
        try:
            return decode_features(self.read_bytes(path))
        except FormatError as e:
            e.details.setdefault("file", str(path))
            raise

    # --------------------------------------------------------- annotations
    def load_annotations(self, path: PathLike) -> AnnotationSet:
        return annotations_from_dict(self.load_json_file(path))

    def save_annotations(self, path: PathLike, annotations: AnnotationSet) -> Path:
        return self.save_json_file(path, annotations_to_dict(annotations))

    def load_dataset(self, annotations_path: PathLike, feature_dir: PathLike) -> Tuple[List[VideoSample], AnnotationSet]:
        """
        Load every annotated video's features.

        Raises:
            DataValidationError: If a feature file disagrees with its annotation length
        """
        annotations = self.load_annotations(annotations_path)
        feature_root = self.resolve(feature_dir)
        samples = []
        for video in annotations.videos:
            features = self.read_features(feature_root / f"{video.video_id}.tdft")
            if features.shape[0] != video.num_instants:
                raise DataValidationError(
                    f"{video.video_id}: feature length {features.shape[0]} != num_instants {video.num_instants}",
                    error_code="LENGTH_MISMATCH",
                )
            samples.append(VideoSample(video.video_id, features, list(video.segments)))
        logger.info(f"Loaded {len(samples)} videos from {annotations_path}")
        return samples, annotations

    # ---------------------------------------------------------- checkpoints
    def save_checkpoint(self, path: PathLike, config_json: str, params: Mapping[str, np.ndarray]) -> Path:
        return self.write_bytes(path, encode_checkpoint(config_json, params))

    def load_checkpoint(self, path: PathLike) -> Tuple[str, "OrderedDict[str, np.ndarray]"]:
        return decode_checkpoint(self.read_bytes(path))

    # -------------------------------------------------- detections / reports
    def save_detections(self, path: PathLike, detections: Iterable[Detection]) -> Path:
        return self.write_text(path, detections_to_lines(detections))

    def load_detections(self, path: PathLike) -> List[Detection]:
        return detections_from_lines(self.read_bytes(path).decode("utf-8"))

    def save_eval_report(self, path: PathLike, map_per_threshold: Mapping[float, float], average_map: float) -> Path:
        report: Dict[str, float] = {format(t, "g"): float(v) for t, v in map_per_threshold.items()}
        report["average_mAP"] = float(average_map)
        return self.save_json_file(path, report)

    def save_table(self, path: PathLike, table: pd.DataFrame) -> Path:
        """Write a DataFrame as CSV (no index)."""
        return self.write_text(path, table.to_csv(index=False, lineterminator="\n"))


def segments_to_frame(records: Iterable[Union[Detection, Tuple[str, ActionSegment]]]) -> pd.DataFrame:
    """Tabulate detections or (video_id, segment) pairs for evaluation."""
    rows = []
    for rec in records:
        if isinstance(rec, Detection):
            rows.append(asdict(rec))
        else:
            video_id, seg = rec
            rows.append({"video_id": video_id, "start": seg.start, "end": seg.end, "label": seg.label, "score": seg.score})
    return pd.DataFrame(rows, columns=["video_id", "start", "end", "label", "score"])
