"""
Embedding stage and multi-scale feature pyramid.

Backbone features are projected to the model width by two depthwise-separable
convolutions, then processed level by level: level 1 applies a block to the
embedding, each further level applies a block to the stride-2 max-pooled
output of the previous level. Level ``l`` (1-based) has stride ``2**(l-1)``.
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from components.sgp_layer import BlockParams, apply_block
from components.tensor_core import Parameter, Tensor, depthwise_conv1d, fc_forward, max_pool_stride2, relu
from utils.exceptions import ConfigurationError


@dataclass
class EmbedParams:
    """Two depthwise(w=3) + FC layers mapping input_dim -> dim."""
    conv1: Parameter
    fc1_w: Parameter
    fc1_b: Parameter
    conv2: Parameter
    fc2_w: Parameter
    fc2_b: Parameter

    def parameters(self) -> List[Parameter]:
        return [self.conv1, self.fc1_w, self.fc1_b, self.conv2, self.fc2_w, self.fc2_b]


@dataclass
class PyramidFeatures:
    """Per-level features; ``levels[i]`` is level ``i + 1``."""
    levels: List[Tensor] = field(default_factory=list)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def lengths(self) -> List[int]:
        return [level.shape[0] for level in self.levels]


def init_embed_params(input_dim: int, dim: int, rng: np.random.Generator, prefix: str = "embed") -> EmbedParams:
    return EmbedParams(
        conv1=Parameter(rng.normal(0.0, np.sqrt(1.0 / 3), size=(input_dim, 3)), f"{prefix}.conv1"),
        fc1_w=Parameter(rng.normal(0.0, np.sqrt(1.0 / input_dim), size=(input_dim, dim)), f"{prefix}.fc1.w"),
        fc1_b=Parameter(np.zeros(dim), f"{prefix}.fc1.b"),
        conv2=Parameter(rng.normal(0.0, np.sqrt(1.0 / 3), size=(dim, 3)), f"{prefix}.conv2"),
        fc2_w=Parameter(rng.normal(0.0, np.sqrt(1.0 / dim), size=(dim, dim)), f"{prefix}.fc2.w"),
        fc2_b=Parameter(np.zeros(dim), f"{prefix}.fc2.b"),
    )


def embed(x: Tensor, p: EmbedParams) -> Tensor:
    h = relu(fc_forward(depthwise_conv1d(x, p.conv1, 3), p.fc1_w, p.fc1_b))
    return relu(fc_forward(depthwise_conv1d(h, p.conv2, 3), p.fc2_w, p.fc2_b))


def level_lengths(num_instants: int, num_levels: int) -> List[int]:
    """ceil-halving chain of level lengths."""
    lengths = [num_instants]
    for _ in range(num_levels - 1):
        lengths.append((lengths[-1] + 1) // 2)
    return lengths


def build_pyramid(x: Tensor, level_params: Sequence[BlockParams]) -> PyramidFeatures:
    """
    Run one block per level, pooling the previous level's output before each level after the first.

    Args:
        x: Embedded features [T, D]
        level_params: One block parameter set per level; its length is the level count L

    Raises:
        ConfigurationError: If no level is requested
    """
    if len(level_params) < 1:
        raise ConfigurationError("build_pyramid: at least one level is required", error_code="BAD_LEVELS")
    levels = [apply_block(x, level_params[0])]
    for params in level_params[1:]:
        levels.append(apply_block(max_pool_stride2(levels[-1]), params))
    return PyramidFeatures(levels)
