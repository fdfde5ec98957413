"""
Label assignment, losses, optimizer and the training loop.

Positives are chosen by center sampling: an instant at input position
``p = t * stride`` is positive for a segment when it lies within
``center_radius * stride`` of the segment center, inside the segment, and the
larger of its two boundary distances falls in the level's regression range.
Each positive's classification loss is reweighted by the (gradient-free)
temporal IoU of its decoded segment; regression uses the 1-D GIoU loss.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from components.detector import TriDetModel
from components.feature_pyramid import level_lengths
from components.tensor_core import (
    Parameter,
    Tensor,
    backward,
    concat,
    maximum,
    minimum,
    sigmoid,
    zero_grad,
)
from components.trident_head import HeadOutputs, decode_offsets
from config.train_config import TrainConfig
from utils.data_processor import ActionSegment, VideoSample
from utils.exceptions import ConfigurationError, DataValidationError
from utils.validators import validate_segment

PROB_EPS = 1e-7


# ------------------------------------------------------------------ geometry
@dataclass
class LevelGeometry:
    level: int
    stride: int
    length: int
    reg_lo: float
    reg_hi: float


def regression_range(level: int, num_levels: int) -> Tuple[float, float]:
    """[lo, hi) on the larger boundary distance, in input instants; the top level is unbounded above."""
    lo = 0.0 if level == 1 else float(2 ** level)
    hi = math.inf if level == num_levels else float(2 ** (level + 1))
    return lo, hi


def pyramid_geometry(num_instants: int, num_levels: int) -> List[LevelGeometry]:
    geometry = []
    for i, length in enumerate(level_lengths(num_instants, num_levels)):
        lo, hi = regression_range(i + 1, num_levels)
        geometry.append(LevelGeometry(level=i + 1, stride=2 ** i, length=length, reg_lo=lo, reg_hi=hi))
    return geometry


# ---------------------------------------------------------------- assignment
@dataclass
class LevelTargets:
    level: int
    stride: int
    positive: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray
    valid: np.ndarray
    segment_index: np.ndarray


@dataclass
class AssignedTargets:
    """Per-level targets; label 0 is background, c + 1 is class c; offsets are in level units."""
    levels: List[LevelTargets] = field(default_factory=list)

    def concatenated(self, name: str) -> np.ndarray:
        return np.concatenate([getattr(lv, name) for lv in self.levels], axis=0)

    @property
    def num_positive(self) -> int:
        return int(sum(lv.positive.sum() for lv in self.levels))

    @property
    def num_negative(self) -> int:
        return int(sum((lv.valid & ~lv.positive).sum() for lv in self.levels))


def assign_targets(
    gt: Sequence[ActionSegment],
    geometry: Sequence[LevelGeometry],
    cfg: TrainConfig,
    valid_length: Optional[float] = None,
) -> AssignedTargets:
    """
    Center-sampling label assignment.

    Ties between several matching segments go to the shortest one, then to the
    lowest index. Instants at or beyond ``valid_length`` are padding: never
    positive and excluded from the negatives.

    Raises:
        DataValidationError: If a segment has end <= start
    """
    for k, seg in enumerate(gt):
        check = validate_segment(float(seg.start), float(seg.end))
        if not check:
            raise DataValidationError(f"gt[{k}]: {check.message}", error_code="BAD_SEGMENT", details={"index": k})
    if valid_length is None:
        valid_length = geometry[0].length
    starts = np.array([s.start for s in gt], dtype=np.float64)
    ends = np.array([s.end for s in gt], dtype=np.float64)
    labels = np.array([s.label for s in gt], dtype=np.int64)
    centers = 0.5 * (starts + ends)
    lengths = ends - starts

    levels = []
    for geo in geometry:
        p = np.arange(geo.length, dtype=np.float64) * geo.stride
        valid = p < valid_length
        positive = np.zeros(geo.length, dtype=bool)
        target_labels = np.zeros(geo.length, dtype=np.int64)
        offsets = np.zeros((geo.length, 2))
        seg_index = np.full(geo.length, -1, dtype=np.int64)
        if len(gt):
            left = p[:, None] - starts[None, :]
            right = ends[None, :] - p[:, None]
            near_center = np.abs(p[:, None] - centers[None, :]) <= cfg.center_radius * geo.stride
            inside = (left >= 0) & (right >= 0)
            reach = np.maximum(left, right)
            in_range = (reach >= geo.reg_lo) & (reach < geo.reg_hi)
            candidate = near_center & inside & in_range & valid[:, None]
            cost = np.where(candidate, lengths[None, :], np.inf)
            best = np.argmin(cost, axis=1)
            rows = np.arange(geo.length)
            positive = np.isfinite(cost[rows, best])
            seg_index = np.where(positive, best, -1)
            target_labels = np.where(positive, labels[best] + 1, 0)
            offsets = np.where(
                positive[:, None],
                np.stack([left[rows, best], right[rows, best]], axis=1) / geo.stride,
                0.0,
            )
        levels.append(LevelTargets(geo.level, geo.stride, positive, target_labels, offsets, valid, seg_index))
    return AssignedTargets(levels)


# -------------------------------------------------------------------- losses
def focal_terms(prob: Tensor, y: np.ndarray, alpha: float, gamma: float) -> Tensor:
    """Elementwise sigmoid focal loss for probabilities ``prob`` and binary targets ``y``."""
    p = prob.clip(PROB_EPS, 1.0 - PROB_EPS)
    pos = ((1.0 - p) ** gamma) * p.log() * (-alpha)
    neg = (p ** gamma) * (1.0 - p).log() * (-(1.0 - alpha))
    return pos * y + neg * (1.0 - y)


def focal_loss(
    p: Union[float, np.ndarray],
    y: Union[int, np.ndarray],
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> float:
    """Summed focal loss of probabilities ``p`` (clamped to [1e-7, 1 - 1e-7]) against targets ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return float(focal_terms(Tensor(p), y, alpha, gamma).data.sum())


def giou_loss_terms(
    pred_start: Union[Tensor, np.ndarray],
    pred_end: Union[Tensor, np.ndarray],
    gt_start: Union[Tensor, np.ndarray],
    gt_end: Union[Tensor, np.ndarray],
) -> Tensor:
    """Elementwise 1-D GIoU loss, 1 - (I/U - (hull - U)/hull), in [0, 2]."""
    inter = maximum(minimum(pred_end, gt_end) - maximum(pred_start, gt_start), 0.0)
    union = (Tensor(0.0) + pred_end - pred_start) + (Tensor(0.0) + gt_end - gt_start) - inter
    hull = maximum(pred_end, gt_end) - minimum(pred_start, gt_start)
    return 1.0 - (inter / union - (hull - union) / hull)


def iou_loss(pred: Tuple[float, float], gt: Tuple[float, float]) -> float:
    """
    GIoU loss between a predicted and a ground-truth segment.

    Raises:
        DataValidationError: If the ground truth is degenerate (end <= start)
    """
    if not gt[1] > gt[0]:
        raise DataValidationError(f"Degenerate ground-truth segment {gt}", error_code="BAD_SEGMENT")
    return float(giou_loss_terms(
        np.array([pred[0]], dtype=np.float64),
        np.array([pred[1]], dtype=np.float64),
        np.array([gt[0]], dtype=np.float64),
        np.array([gt[1]], dtype=np.float64),
    ).data[0])


def offset_iou(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Temporal IoU of segments given as (d_st, d_et) around the same instant."""
    inter = np.minimum(pred[:, 0], target[:, 0]) + np.minimum(pred[:, 1], target[:, 1])
    union = pred.sum(axis=1) + target.sum(axis=1) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass
class LossTerms:
    total: Tensor
    cls_positive: float
    regression: float
    cls_negative: float
    num_positive: int
    num_negative: int
    iou: np.ndarray

    @property
    def value(self) -> float:
        return self.total.item()


def compute_loss(
    heads: HeadOutputs,
    targets: AssignedTargets,
    cfg: TrainConfig,
    frozen_iou: Optional[np.ndarray] = None,
) -> LossTerms:
    """
    (1/N_pos) sum_pos (sigma_IoU * L_cls + L_reg) + (1/N_neg) sum_neg L_cls.

    sigma_IoU is raised to ``cfg.iou_weight_power`` and never differentiated.
    ``frozen_iou`` replaces it with fixed values (used for finite differences).
    """
    logits = concat([lv.cls_logits for lv in heads.levels], axis=0)
    offsets = concat([decode_offsets(lv, heads.num_bins) for lv in heads.levels], axis=0)
    positive = targets.concatenated("positive")
    labels = targets.concatenated("labels")
    target_offsets = targets.concatenated("offsets")
    valid = targets.concatenated("valid")

    onehot = np.zeros(logits.shape)
    pos_idx = np.flatnonzero(positive)
    onehot[pos_idx, labels[pos_idx] - 1] = 1.0
    cls_per_instant = focal_terms(sigmoid(logits), onehot, cfg.focal_alpha, cfg.focal_gamma).sum(axis=1)

    negative = valid & ~positive
    num_pos, num_neg = int(pos_idx.size), int(negative.sum())
    total = Tensor(0.0)
    cls_pos = reg_value = cls_neg = 0.0
    iou = np.zeros(0)

    if num_neg:
        neg_term = (cls_per_instant * negative.astype(np.float64)).sum() * (1.0 / num_neg)
        cls_neg = neg_term.item()
        total = total + neg_term
    if num_pos:
        pred = offsets[pos_idx]
        goal = target_offsets[pos_idx]
        iou = offset_iou(pred.data, goal) if frozen_iou is None else np.asarray(frozen_iou, dtype=np.float64)
        weight = iou ** cfg.iou_weight_power
        reg = giou_loss_terms(-pred[:, 0], pred[:, 1], -goal[:, 0], goal[:, 1])
        cls_weighted = cls_per_instant[pos_idx] * weight
        cls_pos = float(cls_weighted.data.sum()) / num_pos
        reg_value = float(reg.data.sum()) / num_pos
        total = total + (cls_weighted + reg).sum() * (1.0 / num_pos)
    return LossTerms(total, cls_pos, reg_value, cls_neg, num_pos, num_neg, iou)


def total_loss(
    heads: HeadOutputs,
    targets: AssignedTargets,
    cfg: TrainConfig,
    frozen_iou: Optional[np.ndarray] = None,
) -> Tensor:
    return compute_loss(heads, targets, cfg, frozen_iou).total


# ----------------------------------------------------------------- optimizer
@dataclass
class AdamState:
    step: int
    m: List[np.ndarray]
    v: List[np.ndarray]

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(
    params: Sequence[Tensor],
    state: AdamState,
    lr_t: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay_mask: Optional[Sequence[bool]] = None,
) -> None:
    """One AdamW update in place: decoupled decay, then the bias-corrected Adam step."""
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if weight_decay and (decay_mask is None or decay_mask[i]):
            p.data *= 1.0 - lr_t * weight_decay
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr_t * (m / bias1) / (np.sqrt(v / bias2) + eps)


class AdamW:
    """AdamW over a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Parameter],
        weight_decay: float = 0.0,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        decay_mask: Optional[Sequence[bool]] = None,
    ):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.decay_mask = list(decay_mask) if decay_mask is not None else None
        self.state = AdamState.for_params(self.params)

    def step(self, lr_t: float) -> None:
        adamw_step(
            self.params, self.state, lr_t, self.betas[0], self.betas[1], self.eps,
            self.weight_decay, self.decay_mask,
        )

    def zero_grad(self) -> None:
        zero_grad(self.params)


def cosine_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 over ``warmup_epochs``, then cosine annealing towards 0."""
    if epoch < cfg.warmup_epochs:
        return cfg.lr * epoch / cfg.warmup_epochs
    span = max(1, cfg.epochs - cfg.warmup_epochs)
    progress = (epoch - cfg.warmup_epochs) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------- loop
@dataclass
class Clip:
    features: np.ndarray
    segments: List[ActionSegment]
    valid_length: int
    offset: int = 0


def prepare_clip(sample: VideoSample, max_seq_len: int, rng: np.random.Generator) -> Clip:
    """
    Crop at a random offset or zero-pad to exactly ``max_seq_len`` instants.

    Cropped segments are trimmed to the window; those shorter than one instant are dropped.
    """
    T = sample.num_instants
    if T > max_seq_len:
        offset = int(rng.integers(0, T - max_seq_len + 1))
        segments = []
        for seg in sample.segments:
            start = max(seg.start - offset, 0.0)
            end = min(seg.end - offset, float(max_seq_len))
            if end - start >= 1.0:
                segments.append(ActionSegment(start, end, seg.label))
        return Clip(sample.features[offset:offset + max_seq_len], segments, max_seq_len, offset)
    features = np.zeros((max_seq_len, sample.features.shape[1]))
    features[:T] = sample.features
    return Clip(features, list(sample.segments), T, 0)



def segments_beyond_reach(dataset: Sequence[VideoSample], cfg: TrainConfig) -> int:
    """Segments longer than twice ``cfg.top_level_reach``, which no instant can regress exactly."""
    limit = 2 * cfg.top_level_reach
    return sum(1 for sample in dataset for seg in sample.segments if seg.end - seg.start > limit)

@dataclass
class TrainResult:
    model: TriDetModel
    losses: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)


def train(
    dataset: Sequence[VideoSample],
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """
    Train a detector from scratch; deterministic for a fixed ``cfg.seed``.

    Args:
        dataset: Training videos
        cfg: Run configuration
        on_epoch: Optional callback receiving (epoch, lr, mean loss)

    Raises:
        ConfigurationError: If the dataset is empty
    """
    if not dataset:
        raise ConfigurationError("train: the dataset is empty", error_code="EMPTY_DATASET")
    cfg.validate()
    model = TriDetModel(cfg)
    params = model.parameters()
    optimizer = AdamW(params, weight_decay=cfg.weight_decay, decay_mask=[p.ndim >= 2 for p in params])
    rng = np.random.default_rng([cfg.seed, 1])
    geometry = pyramid_geometry(cfg.max_seq_len, cfg.num_levels)
    result = TrainResult(model)
    logger.info(
        f"Training on {len(dataset)} videos for {cfg.epochs} epochs "
        f"({model.num_parameters()} parameters, head={'trident' if cfg.use_trident_head else 'plain'})"
    )
    too_long = segments_beyond_reach(dataset, cfg)
    if too_long:
        logger.warning(
            f"{too_long} segments are longer than {2 * cfg.top_level_reach} instants, the most the top level "
            f"can regress (num_bins={cfg.num_bins}, num_levels={cfg.num_levels})"
        )

    for epoch in range(cfg.epochs):
        lr_t = cosine_schedule(epoch, cfg)
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for first in range(0, len(order), cfg.batch_size):
            batch = order[first:first + cfg.batch_size]
            optimizer.zero_grad()
            for idx in batch:
                clip = prepare_clip(dataset[idx], cfg.max_seq_len, rng)
                targets = assign_targets(clip.segments, geometry, cfg, clip.valid_length)
                terms = compute_loss(model.forward(clip.features), targets, cfg)
                if terms.total.requires_grad:
                    backward(terms.total * (1.0 / len(batch)))
                epoch_loss += terms.value
            optimizer.step(lr_t)
        mean_loss = epoch_loss / len(dataset)
        result.losses.append(mean_loss)
        result.learning_rates.append(lr_t)
        logger.info(f"epoch {epoch + 1}/{cfg.epochs} lr={lr_t:.3e} loss={mean_loss:.5f}")
        if epoch >= cfg.warmup_epochs + 5 and mean_loss > result.losses[epoch - 5]:
            logger.warning(
                f"Loss rose over the last 5 epochs ({result.losses[epoch - 5]:.5f} -> {mean_loss:.5f})"
            )
        if on_epoch is not None:
            on_epoch(epoch, lr_t, mean_loss)
    return result
