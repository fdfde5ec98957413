"""
Finite-difference verification of every differentiable block.

Each check builds a small random problem, reduces the block's output to a
scalar with a fixed random projection (plain sums can have identically zero
gradients, which relative error cannot judge) and runs ``grad_check``.

Central differences are only meaningful away from the kinks of relu, clip,
maximum/minimum and max pooling, and for gradients well above their rounding
error. Problems are redrawn until every such input sits more than
``KINK_MARGIN_STEPS`` steps from its kink and every gradient entry is either
exactly zero or at least ``GRADIENT_FLOOR``. Head branches and biases get
unit-scale values so that most draws qualify.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from components.detector import TriDetModel
from components.feature_pyramid import PyramidFeatures, embed, init_embed_params
from components.sgp_layer import conv_block, init_conv_block_params, init_sgp_params, sgp_block
from components.tensor_core import (
    Parameter,
    Tensor,
    backward,
    concat,
    depthwise_conv1d,
    fc_forward,
    global_avg_pool,
    grad_check,
    group_norm,
    kink_margin,
    layer_norm,
    max_pool_stride2,
    no_grad,
    relu,
    sigmoid,
    softmax,
)
from components.training import assign_targets, compute_loss, pyramid_geometry
from components.trident_head import HeadParams, decode_offsets, init_head_params, run_heads
from config.settings import get_settings
from config.train_config import TrainConfig
from utils.data_processor import ActionSegment
from utils.exceptions import NumericError

Check = Tuple[Callable[[], Tensor], Sequence[Tensor]]
CheckBuilder = Callable[[np.random.Generator], Check]

KINK_MARGIN_STEPS = 10.0
GRADIENT_FLOOR = 1e-6
MAX_DRAWS = 100
HEAD_INIT_STD = 0.5
VECTOR_JITTER = 0.5


def _leaf(rng: np.random.Generator, *shape: int, name: str = "x") -> Parameter:
    return Parameter(rng.normal(size=shape), name)


def jitter_vectors(params: Sequence[Parameter], rng: np.random.Generator, scale: float = VECTOR_JITTER) -> None:
    """Add noise to every 1-D parameter (biases, gains, shifts) in place."""
    for p in params:
        if p.ndim == 1:
            p.data += rng.normal(0.0, scale, size=p.shape)


def identifiable(params: Sequence[Parameter], heads: HeadParams) -> List[Parameter]:
    """``params`` without the bin-shift biases, whose gradient through decoded offsets is zero."""
    shift = {id(p) for p in heads.bin_shift_biases()}
    return [p for p in params if id(p) not in shift]


def _projected(forward: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator) -> Check:
    with no_grad():
        weights = rng.normal(size=forward().shape)
    return (lambda: (forward() * weights).sum()), list(params)


def toy_config(**overrides) -> TrainConfig:
    """A detector small enough for exhaustive finite differences."""
    base = dict(
        num_bins=4, sgp_window=3, sgp_scale=1.5, num_levels=2, embed_dim=8, input_dim=4, num_classes=2,
        ffn_ratio=1, gn_groups=2, detach_boundary=False, boundary_init_std=HEAD_INIT_STD,
        cls_prior_prob=0.1, max_seq_len=16, seed=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


def toy_clip(cfg: TrainConfig, rng: np.random.Generator) -> Tuple[np.ndarray, List[ActionSegment]]:
    features = rng.normal(size=(cfg.max_seq_len, cfg.input_dim))
    return features, [ActionSegment(2.0, 7.0, 0), ActionSegment(9.0, 15.0, 1)]


def toy_heads(dim: int, num_classes: int, num_bins: int, rng: np.random.Generator) -> HeadParams:
    """Trident heads with unit-scale boundary branches and non-zero biases."""
    heads = init_head_params(
        dim, num_classes, num_bins, rng, detach_boundary=False, boundary_init_std=HEAD_INIT_STD, cls_prior_prob=0.1
    )
    jitter_vectors(heads.parameters(), rng)
    return heads


# ------------------------------------------------------------------ checks
def _fc_check(rng: np.random.Generator) -> Check:
    x, W, b = _leaf(rng, 4, 3), _leaf(rng, 3, 2, name="W"), _leaf(rng, 2, name="b")
    return _projected(lambda: fc_forward(x, W, b), [x, W, b], rng)


def _dwconv_check(rng: np.random.Generator) -> Check:
    x, kernel = _leaf(rng, 8, 4), _leaf(rng, 4, 3, name="kernel")
    return _projected(lambda: depthwise_conv1d(x, kernel, 3), [x, kernel], rng)


def _avg_pool_check(rng: np.random.Generator) -> Check:
    x = _leaf(rng, 6, 4)
    return _projected(lambda: global_avg_pool(x), [x], rng)


def _max_pool_check(rng: np.random.Generator) -> Check:
    x = _leaf(rng, 7, 3)
    return _projected(lambda: max_pool_stride2(x), [x], rng)


def _softmax_check(rng: np.random.Generator) -> Check:
    v = _leaf(rng, 3, 5)
    return _projected(lambda: softmax(v, axis=-1), [v], rng)


def _layer_norm_check(rng: np.random.Generator) -> Check:
    x, gamma, beta = _leaf(rng, 4, 6), _leaf(rng, 6, name="gamma"), _leaf(rng, 6, name="beta")
    return _projected(lambda: layer_norm(x, gamma, beta), [x, gamma, beta], rng)


def _group_norm_check(rng: np.random.Generator) -> Check:
    x, gamma, beta = _leaf(rng, 4, 8), _leaf(rng, 8, name="gamma"), _leaf(rng, 8, name="beta")
    return _projected(lambda: group_norm(x, 2, gamma, beta), [x, gamma, beta], rng)


def _elementwise_check(rng: np.random.Generator) -> Check:
    a, c = _leaf(rng, 5, 3), _leaf(rng, 5, 3, name="y")
    return _projected(lambda: sigmoid(a) * relu(c) + a * c - (a * a).exp() * 0.1, [a, c], rng)


def _sgp_check(rng: np.random.Generator) -> Check:
    x = _leaf(rng, 16, 8)
    sgp = init_sgp_params(8, 3, 1.5, 4, 4, rng)
    jitter_vectors(sgp.parameters(), rng)
    return _projected(lambda: sgp_block(x, sgp), [x] + sgp.parameters(), rng)


def _conv_block_check(rng: np.random.Generator) -> Check:
    x = _leaf(rng, 12, 8)
    conv = init_conv_block_params(8, 2, rng)
    jitter_vectors(conv.parameters(), rng)
    return _projected(lambda: conv_block(x, conv), [x] + conv.parameters(), rng)


def _embed_check(rng: np.random.Generator) -> Check:
    x = _leaf(rng, 10, 4)
    emb = init_embed_params(4, 8, rng)
    jitter_vectors(emb.parameters(), rng)
    return _projected(lambda: embed(x, emb), [x] + emb.parameters(), rng)


def _heads_check(rng: np.random.Generator) -> Check:
    feats = PyramidFeatures([_leaf(rng, 8, 8, name="level1"), _leaf(rng, 4, 8, name="level2")])
    heads = toy_heads(8, 2, 4, rng)

    def head_outputs() -> Tensor:
        out = run_heads(feats, heads)
        parts = []
        for lv in out.levels:
            parts.extend([lv.cls_logits.reshape(-1), lv.f_start, lv.f_end, lv.f_center.reshape(-1)])
        return concat(parts, axis=0)

    return _projected(head_outputs, feats.levels + heads.parameters(), rng)


def _offsets_check(rng: np.random.Generator) -> Check:
    feats = PyramidFeatures([_leaf(rng, 8, 8, name="level1"), _leaf(rng, 4, 8, name="level2")])
    heads = toy_heads(8, 2, 4, rng)

    def offsets() -> Tensor:
        out = run_heads(feats, heads)
        return concat([decode_offsets(lv, out.num_bins) for lv in out.levels], axis=0)

    return _projected(offsets, feats.levels + identifiable(heads.parameters(), heads), rng)


def _loss_check(rng: np.random.Generator, use_trident: bool = True) -> Check:
    cfg = toy_config(use_trident_head=use_trident, seed=int(rng.integers(2 ** 31)))
    model = TriDetModel(cfg)
    jitter_vectors(model.parameters(), rng)
    features, segments = toy_clip(cfg, rng)
    targets = assign_targets(segments, pyramid_geometry(cfg.max_seq_len, cfg.num_levels), cfg)
    with no_grad():
        base = compute_loss(model.forward(features), targets, cfg)
    positive = targets.concatenated("positive")
    frozen = base.iou if positive.any() else None

    def forward() -> Tensor:
        return compute_loss(model.forward(features), targets, cfg, frozen_iou=frozen).total

    return forward, identifiable(model.parameters(), model.heads)


CHECKS: Dict[str, CheckBuilder] = {
    "fc_forward": _fc_check,
    "depthwise_conv1d": _dwconv_check,
    "global_avg_pool": _avg_pool_check,
    "max_pool_stride2": _max_pool_check,
    "softmax": _softmax_check,
    "layer_norm": _layer_norm_check,
    "group_norm": _group_norm_check,
    "elementwise": _elementwise_check,
    "sgp_block": _sgp_check,
    "conv_block": _conv_block_check,
    "embed": _embed_check,
    "trident_heads": _heads_check,
    "decoded_offsets": _offsets_check,
    "total_loss": _loss_check,
    "total_loss_plain_head": lambda rng: _loss_check(rng, use_trident=False),
}


def _resolvable(out: Tensor, params: Sequence[Tensor]) -> bool:
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(out)
    ok = all(np.all((p.grad == 0.0) | (np.abs(p.grad) >= GRADIENT_FLOOR)) for p in params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    return ok


def well_posed(builder: CheckBuilder, rng: np.random.Generator, h: float = 1e-5) -> Check:
    """
    Draw problems from ``builder`` until finite differences can judge them.

    A draw qualifies when no kink lies within ``KINK_MARGIN_STEPS * h`` of the
    checked point and no gradient entry is nonzero but below ``GRADIENT_FLOOR``.

    Raises:
        NumericError: If none of ``MAX_DRAWS`` draws qualifies
    """
    margin = KINK_MARGIN_STEPS * h
    closest = 0.0
    for draw in range(MAX_DRAWS):
        forward, params = builder(rng)
        out = forward()
        closest = kink_margin(out)
        if closest > margin and _resolvable(out, params):
            return forward, params
        logger.debug(f"redrawing check problem {draw}: closest kink {closest:.2e}")
    raise NumericError(
        f"no problem qualified for finite differences in {MAX_DRAWS} draws (kink margin {margin:.1e})",
        error_code="NO_WELL_POSED_DRAW",
        details={"margin": margin, "closest": closest},
    )


def build_checks(seed: int = 0, h: float = 1e-5) -> Dict[str, Check]:
    rng = np.random.default_rng(seed)
    return {name: well_posed(builder, rng, h) for name, builder in CHECKS.items()}


def run_gradcheck_suite(
    tolerance: Optional[float] = None,
    seed: int = 0,
    max_entries: Optional[int] = None,
    h: float = 1e-5,
) -> pd.DataFrame:
    """
    Run every check.

    Args:
        tolerance: Worst acceptable relative error (defaults to TRIDET_GRADCHECK_TOL)
        seed: Seed of the random problems
        max_entries: Optional per-tensor cap on checked entries; None checks every entry
        h: Finite-difference step

    Returns:
        Table with columns block, worst_error, tolerance, passed
    """
    tolerance = get_settings().GRADCHECK_TOLERANCE if tolerance is None else tolerance
    rows = []
    sampler = np.random.default_rng([seed, 7])
    for block, (forward, params) in build_checks(seed, h).items():
        worst = grad_check(forward, params, h=h, max_entries=max_entries, rng=sampler)
        passed = worst < tolerance
        rows.append({"block": block, "worst_error": worst, "tolerance": tolerance, "passed": passed})
        (logger.info if passed else logger.error)(f"gradcheck {block}: worst relative error {worst:.3e}")
    return pd.DataFrame(rows, columns=["block", "worst_error", "tolerance", "passed"])
