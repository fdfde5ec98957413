"""
Classification head and Trident boundary head.

Every branch is a three-layer stack of (depthwise conv w=3 + FC), ReLU
between layers and a linear last layer, shared across all pyramid levels.
The Trident head predicts a start response ``f_start``, an end response
``f_end`` and center offsets ``f_center`` of shape [T, 2, B+1]. The start
offset at instant t is the expectation of the bin index under

    softmax_b(f_start[t - b] + f_center[t, 0, b]),   b = 0..B

and the end offset mirrors it with ``f_end[t + b]`` and ``f_center[t, 1, b]``.
Bins that fall outside the sequence get a logit of -1e4.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from components.feature_pyramid import PyramidFeatures
from components.tensor_core import (
    Parameter,
    Tensor,
    concat,
    depthwise_conv1d,
    fc_forward,
    relu,
    softmax,
)

MASK_LOGIT = -1e4


@dataclass
class HeadLayer:
    kernel: Parameter
    w: Parameter
    b: Parameter

    def parameters(self) -> List[Parameter]:
        return [self.kernel, self.w, self.b]


@dataclass
class BranchParams:
    layers: List[HeadLayer]

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class HeadParams:
    """Shared parameters of every head branch."""
    num_bins: int
    cls: BranchParams
    start: Optional[BranchParams] = None
    end: Optional[BranchParams] = None
    center: Optional[BranchParams] = None
    reg: Optional[BranchParams] = None
    detach_boundary: bool = True

    @property
    def use_trident(self) -> bool:
        return self.center is not None

    def parameters(self) -> List[Parameter]:
        branches = [self.cls, self.start, self.end, self.center, self.reg]
        return [p for branch in branches if branch is not None for p in branch.parameters()]

    def bin_shift_biases(self) -> List[Parameter]:
        """Output biases of the start and end branches; each shifts every bin of its distribution alike."""
        return [branch.layers[-1].b for branch in (self.start, self.end) if branch is not None]


@dataclass
class LevelOutputs:
    """Head outputs of one pyramid level."""
    level: int
    cls_logits: Tensor
    f_start: Optional[Tensor] = None
    f_end: Optional[Tensor] = None
    f_center: Optional[Tensor] = None
    reg: Optional[Tensor] = None

    @property
    def stride(self) -> int:
        return 2 ** (self.level - 1)

    @property
    def length(self) -> int:
        return self.cls_logits.shape[0]


@dataclass
class HeadOutputs:
    levels: List[LevelOutputs] = field(default_factory=list)
    num_bins: int = 0

    @property
    def use_trident(self) -> bool:
        return bool(self.levels) and self.levels[0].f_center is not None


def init_branch(
    dim: int,
    out_dim: int,
    rng: np.random.Generator,
    prefix: str,
    std: Optional[float] = None,
    last_bias: float = 0.0,
) -> BranchParams:
    """
    Three (depthwise + FC) layers; weights from N(0, std) when given, N(0, 1/fan_in) otherwise.
    """
    layers = []
    for i in range(3):
        out = out_dim if i == 2 else dim
        kernel_std = std if std is not None else np.sqrt(1.0 / 3)
        w_std = std if std is not None else np.sqrt(1.0 / dim)
        bias = np.full(out, last_bias if i == 2 else 0.0)
        layers.append(HeadLayer(
            kernel=Parameter(rng.normal(0.0, kernel_std, size=(dim, 3)), f"{prefix}.{i}.kernel"),
            w=Parameter(rng.normal(0.0, w_std, size=(dim, out)), f"{prefix}.{i}.w"),
            b=Parameter(bias, f"{prefix}.{i}.b"),
        ))
    return BranchParams(layers)


def init_head_params(
    dim: int,
    num_classes: int,
    num_bins: int,
    rng: np.random.Generator,
    use_trident: bool = True,
    detach_boundary: bool = True,
    boundary_init_std: float = 0.1,
    cls_prior_prob: float = 0.01,
) -> HeadParams:
    """Classification head with a prior bias, plus either the Trident branches or a plain regression branch."""
    prior_bias = -float(np.log((1.0 - cls_prior_prob) / cls_prior_prob))
    params = HeadParams(
        num_bins=num_bins,
        cls=init_branch(dim, num_classes, rng, "head.cls", last_bias=prior_bias),
        detach_boundary=detach_boundary,
    )
    if use_trident:
        params.start = init_branch(dim, 1, rng, "head.start", std=boundary_init_std)
        params.end = init_branch(dim, 1, rng, "head.end", std=boundary_init_std)
        params.center = init_branch(dim, 2 * (num_bins + 1), rng, "head.center")
    else:
        params.reg = init_branch(dim, 2, rng, "head.reg")
    return params


def run_branch(x: Tensor, branch: BranchParams) -> Tensor:
    h = x
    last = len(branch.layers) - 1
    for i, layer in enumerate(branch.layers):
        h = fc_forward(depthwise_conv1d(h, layer.kernel, 3), layer.w, layer.b)
        if i != last:
            h = relu(h)
    return h


def run_level(x: Tensor, level: int, params: HeadParams) -> LevelOutputs:
    T = x.shape[0]
    out = LevelOutputs(level=level, cls_logits=run_branch(x, params.cls))
    if params.use_trident:
        boundary_in = x.detach() if params.detach_boundary else x
        out.f_start = run_branch(boundary_in, params.start).reshape(T)
        out.f_end = run_branch(boundary_in, params.end).reshape(T)
        out.f_center = run_branch(x, params.center).reshape(T, 2, params.num_bins + 1)
    else:
        out.reg = relu(run_branch(x, params.reg))
    return out


def run_heads(feats: PyramidFeatures, params: HeadParams) -> HeadOutputs:
    """Apply the shared heads to every pyramid level."""
    return HeadOutputs(
        levels=[run_level(x, i + 1, params) for i, x in enumerate(feats.levels)],
        num_bins=params.num_bins,
    )


# ------------------------------------------------------------------- decoding
def _start_gather_index(T: int, num_bins: int) -> np.ndarray:
    # row t, column b -> position of f_start[t - b] in the left-padded vector
    return np.arange(T)[:, None] - np.arange(num_bins + 1)[None, :] + num_bins


def _end_gather_index(T: int, num_bins: int) -> np.ndarray:
    return np.arange(T)[:, None] + np.arange(num_bins + 1)[None, :]


def boundary_logits(level_out: LevelOutputs, num_bins: int) -> Tuple[Tensor, Tensor]:
    """Combined start and end bin logits, each [T, B+1]."""
    T = level_out.length
    pad = Tensor(np.full(num_bins, MASK_LOGIT))
    start_padded = concat([pad, level_out.f_start], axis=0)
    end_padded = concat([level_out.f_end, pad], axis=0)
    start = start_padded[_start_gather_index(T, num_bins)] + level_out.f_center[:, 0, :]
    end = end_padded[_end_gather_index(T, num_bins)] + level_out.f_center[:, 1, :]
    return start, end


def decode_offsets(level_out: LevelOutputs, num_bins: int) -> Tensor:
    """
    Differentiable (d_st, d_et) per instant, in level units, shape [T, 2].

    Falls back to the ReLU regression output for a plain head.
    """
    if level_out.f_center is None:
        return level_out.reg
    T = level_out.length
    start, end = boundary_logits(level_out, num_bins)
    bins = np.arange(num_bins + 1, dtype=np.float64)
    d_start = (softmax(start, axis=-1) * bins).sum(axis=1)
    d_end = (softmax(end, axis=-1) * bins).sum(axis=1)
    return concat([d_start.reshape(T, 1), d_end.reshape(T, 1)], axis=1)


def boundary_distributions(level_out: LevelOutputs, num_bins: int) -> Tuple[np.ndarray, np.ndarray]:
    """Relative start and end probabilities over bins, each [T, B+1]."""
    start, end = boundary_logits(level_out, num_bins)
    return softmax(start, axis=-1).numpy(), softmax(end, axis=-1).numpy()


def _expectation(logits: np.ndarray) -> float:
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    weights /= weights.sum()
    return float((weights * np.arange(logits.size)).sum())


def decode_start_offset(f_start: np.ndarray, f_center_left: np.ndarray, t: int) -> float:
    """
    Expected start distance of instant ``t`` in bins.

    Args:
        f_start: [T] start responses
        f_center_left: [T, B+1] start half of the center offsets
        t: Instant index
    """
    f_start = np.asarray(f_start, dtype=np.float64)
    f_center_left = np.asarray(f_center_left, dtype=np.float64)
    num_bins = f_center_left.shape[1] - 1
    gathered = np.array([f_start[t - b] if t - b >= 0 else MASK_LOGIT for b in range(num_bins + 1)])
    return _expectation(gathered + f_center_left[t])


def decode_end_offset(f_end: np.ndarray, f_center_right: np.ndarray, t: int) -> float:
    """Mirror of ``decode_start_offset`` over instants t..t+B."""
    f_end = np.asarray(f_end, dtype=np.float64)
    f_center_right = np.asarray(f_center_right, dtype=np.float64)
    num_bins = f_center_right.shape[1] - 1
    T = f_end.shape[0]
    gathered = np.array([f_end[t + b] if t + b < T else MASK_LOGIT for b in range(num_bins + 1)])
    return _expectation(gathered + f_center_right[t])


def decode_segment(level: int, t: float, d_st: float, d_et: float) -> Tuple[float, float]:
    """Scale level offsets back to input instants: ((t - d_st) * s, (t + d_et) * s), s = 2**(level-1)."""
    stride = 2 ** (level - 1)
    return (t - d_st) * stride, (t + d_et) * stride


def plain_regression_decode(reg_out: np.ndarray, level: int, t: int) -> Tuple[float, float]:
    """Decode a directly regressed [T, 2] offset map at instant ``t``; negatives clamp to 0."""
    d_st, d_et = np.maximum(np.asarray(reg_out, dtype=np.float64)[t], 0.0)
    return decode_segment(level, t, float(d_st), float(d_et))
