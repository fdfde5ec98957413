"""
Detection post-processing and mAP evaluation.

Candidates are every (level, instant, class) whose sigmoid score exceeds the
threshold; Gaussian Soft-NMS decays overlapping same-class candidates; mean
average precision uses greedy one-to-one matching per video and class and
all-point interpolated AP.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from components.detector import TriDetModel
from components.tensor_core import no_grad
from components.trident_head import HeadOutputs, decode_offsets
from config.train_config import TrainConfig
from utils.data_processor import ActionSegment, AnnotationSet, Detection, segments_to_frame

Segment = Tuple[float, float]


def collect_candidates(
    heads: HeadOutputs,
    score_threshold: float,
    num_instants: int,
    video_id: str = "",
) -> List[Detection]:
    """
    Emit a detection for every (level, instant, class) with sigmoid score above ``score_threshold``.

    Instants whose input position lies at or beyond ``num_instants`` (padding) are skipped;
    segments are clipped to [0, num_instants].
    """
    detections: List[Detection] = []
    with no_grad():
        for lv in heads.levels:
            probs = 1.0 / (1.0 + np.exp(-lv.cls_logits.data))
            offsets = decode_offsets(lv, heads.num_bins).data
            t = np.arange(lv.length, dtype=np.float64)
            starts = np.clip((t - offsets[:, 0]) * lv.stride, 0.0, num_instants)
            ends = np.clip((t + offsets[:, 1]) * lv.stride, 0.0, num_instants)
            keep = (probs > score_threshold) & (t * lv.stride < num_instants)[:, None]
            for ti, label in zip(*np.nonzero(keep)):
                detections.append(Detection(
                    video_id, float(starts[ti]), float(ends[ti]), int(label), float(probs[ti, label])
                ))
    return detections


def temporal_iou(a: Segment, b: Segment) -> float:
    """Intersection over union of two segments; 0 when the union is empty."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _iou_one_to_many(start: float, end: float, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    inter = np.maximum(0.0, np.minimum(end, ends) - np.maximum(start, starts))
    union = (end - start) + (ends - starts) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _final_order(dets: List[Detection], max_keep: int) -> List[Detection]:
    dets.sort(key=lambda d: (-d.score, d.start, d.label))
    return dets[:max_keep]


def soft_nms(
    dets: Sequence[Detection],
    sigma: float = 0.5,
    min_score: float = 1e-3,
    max_keep: int = 200,
) -> List[Detection]:
    """
    Gaussian Soft-NMS, class by class.

    The highest-scoring remaining detection is kept; every other one of the
    same class decays by ``exp(-IoU**2 / sigma)``; those below ``min_score`` are
    dropped. At most ``max_keep`` survive per class and overall, sorted by score
    (ties: earlier start, then lower label).
    """
    kept: List[Detection] = []
    by_class: Dict[Tuple[str, int], List[Detection]] = {}
    for d in dets:
        by_class.setdefault((d.video_id, d.label), []).append(d)
    for (video_id, label), group in sorted(by_class.items()):
        starts = np.array([d.start for d in group])
        ends = np.array([d.end for d in group])
        scores = np.array([d.score for d in group], dtype=np.float64)
        alive = scores >= min_score
        index = np.arange(len(group))
        picked = 0
        while alive.any() and picked < max_keep:
            cand = index[alive]
            # highest score, then earliest start, then input order
            best = cand[np.lexsort((cand, starts[cand], -scores[cand]))[0]]
            kept.append(Detection(video_id, float(starts[best]), float(ends[best]), label, float(scores[best])))
            picked += 1
            alive[best] = False
            rest = index[alive]
            iou = _iou_one_to_many(starts[best], ends[best], starts[rest], ends[rest])
            scores[rest] = scores[rest] * np.exp(-(iou * iou) / sigma)
            alive[rest] = scores[rest] >= min_score
    return _final_order(kept, max_keep)


def soft_nms_reference(
    dets: Sequence[Detection],
    sigma: float = 0.5,
    min_score: float = 1e-3,
    max_keep: int = 200,
) -> List[Detection]:
    """Plain-loop Gaussian Soft-NMS with the same selection and ordering rules as ``soft_nms``."""
    kept: List[Detection] = []
    groups: Dict[Tuple[str, int], List[List]] = {}
    for d in dets:
        group = groups.setdefault((d.video_id, d.label), [])
        # [score, start, end, position within the group]
        group.append([d.score, d.start, d.end, len(group)])
    for (video_id, label) in sorted(groups):
        pool = [item for item in groups[(video_id, label)] if item[0] >= min_score]
        picked = 0
        while pool and picked < max_keep:
            best = pool[0]
            for item in pool[1:]:
                if (-item[0], item[1], item[3]) < (-best[0], best[1], best[3]):
                    best = item
            pool.remove(best)
            kept.append(Detection(video_id, best[1], best[2], label, best[0]))
            picked += 1
            survivors = []
            for item in pool:
                iou = temporal_iou((best[1], best[2]), (item[1], item[2]))
                item[0] = item[0] * math.exp(-(iou * iou) / sigma)
                if item[0] >= min_score:
                    survivors.append(item)
            pool = survivors
    return _final_order(kept, max_keep)


def detect(model: TriDetModel, features: np.ndarray, video_id: str, cfg: Optional[TrainConfig] = None) -> List[Detection]:
    """Run the model on one video and post-process its candidates."""
    cfg = cfg or model.cfg
    T = features.shape[0]
    padded = features
    if T < cfg.max_seq_len:
        padded = np.zeros((cfg.max_seq_len, features.shape[1]))
        padded[:T] = features
    with no_grad():
        heads = model.forward(padded)
    candidates = collect_candidates(heads, cfg.score_threshold, T, video_id)
    detections = soft_nms(candidates, cfg.nms_sigma, cfg.nms_min_score, cfg.max_detections)
    logger.debug(f"{video_id}: {len(candidates)} candidates -> {len(detections)} detections")
    return detections


# -------------------------------------------------------------------- mAP
@dataclass
class EvaluationReport:
    ap: pd.DataFrame
    map_per_threshold: Dict[float, float] = field(default_factory=dict)
    average_map: float = 0.0


def average_precision(tp: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP of a ranked true-positive indicator."""
    if num_gt == 0 or tp.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    mprec = np.concatenate([[0.0], precision, [0.0]])
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mprec = np.maximum.accumulate(mprec[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mprec[steps]))


def _gt_frame(gts: Union[AnnotationSet, Mapping[str, Sequence[ActionSegment]]]) -> pd.DataFrame:
    if isinstance(gts, AnnotationSet):
        pairs = [(v.video_id, s) for v in gts.videos for s in v.segments]
    else:
        pairs = [(vid, s) for vid, segs in gts.items() for s in segs]
    return segments_to_frame(pairs)


def _match(dets: pd.DataFrame, gt_lookup: Mapping[str, Tuple[np.ndarray, np.ndarray]], threshold: float) -> np.ndarray:
    used = {vid: np.zeros(len(starts), dtype=bool) for vid, (starts, _) in gt_lookup.items()}
    tp = np.zeros(len(dets))
    for i, (vid, start, end) in enumerate(zip(dets["video_id"], dets["start"], dets["end"])):
        if vid not in gt_lookup:
            continue
        starts, ends = gt_lookup[vid]
        iou = _iou_one_to_many(float(start), float(end), starts, ends)
        iou = np.where(used[vid], -1.0, iou)
        j = int(np.argmax(iou))
        if iou[j] >= threshold:
            used[vid][j] = True
            tp[i] = 1.0
    return tp


def mean_ap(
    dets: Iterable[Detection],
    gts: Union[AnnotationSet, Mapping[str, Sequence[ActionSegment]]],
    thresholds: Sequence[float] = (0.3, 0.4, 0.5, 0.6, 0.7),
) -> EvaluationReport:
    """
    Per-class AP at each IoU threshold, mAP per threshold and their average.

    Only classes with at least one ground-truth segment are averaged.
    """
    det_df = segments_to_frame(list(dets))
    gt_df = _gt_frame(gts)
    rows = []
    for label, class_gt in gt_df.groupby("label", sort=True):
        class_dets = det_df[det_df["label"] == label].sort_values("score", ascending=False, kind="mergesort")
        lookup = {
            vid: (g["start"].to_numpy(dtype=np.float64), g["end"].to_numpy(dtype=np.float64))
            for vid, g in class_gt.groupby("video_id", sort=True)
        }
        for threshold in thresholds:
            tp = _match(class_dets, lookup, threshold)
            rows.append({
                "threshold": float(threshold),
                "label": int(label),
                "ap": average_precision(tp, len(class_gt)),
                "num_gt": int(len(class_gt)),
                "num_det": int(len(class_dets)),
            })
    ap = pd.DataFrame(rows, columns=["threshold", "label", "ap", "num_gt", "num_det"])
    map_per_threshold = {float(t): 0.0 for t in thresholds}
    if not ap.empty:
        for t, value in ap.groupby("threshold", sort=True)["ap"].mean().items():
            map_per_threshold[float(t)] = float(value)
    average = float(np.mean(list(map_per_threshold.values()))) if map_per_threshold else 0.0
    logger.info(
        "mAP " + ", ".join(f"@{t:g}={v:.4f}" for t, v in map_per_threshold.items()) + f", average={average:.4f}"
    )
    return EvaluationReport(ap=ap, map_per_threshold=map_per_threshold, average_map=average)
