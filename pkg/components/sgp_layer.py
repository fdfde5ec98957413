"""
Scalable-Granularity Perception block.

The block replaces self-attention in a pre-norm Transformer layer with two
branches over layer-normalized input:

- an instant-level branch: a global-context gate ``phi(x) = ReLU(FC(AvgPool(x)))``
  multiplied with ``FC(x)``;
- a window-level branch: ``psi(x) = Conv_w(x)`` multiplied with
  ``Conv_w(x) + Conv_kw(x)``, two depthwise convolutions of window ``w`` and
  ``round_to_odd(k * w)``.

The core ends in the identity residual; a group-normalized FFN follows with
its own residual. ``conv_block`` is the plain convolutional baseline used in
ablations.
"""

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from components.tensor_core import (
    Parameter,
    Tensor,
    depthwise_conv1d,
    fc_forward,
    global_avg_pool,
    group_norm,
    layer_norm,
    relu,
)
from config.train_config import round_to_odd
from utils.exceptions import ConfigurationError
from utils.validators import validate_groups, validate_odd_window


@dataclass
class SgpLayerParams:
    """Parameters of one SGP block."""
    window: int
    kw_window: int
    groups: int
    fc_instant_w: Parameter
    fc_instant_b: Parameter
    fc_phi_w: Parameter
    fc_phi_b: Parameter
    conv_psi: Parameter
    conv_w: Parameter
    conv_kw: Parameter
    ln_gamma: Parameter
    ln_beta: Parameter
    gn_gamma: Parameter
    gn_beta: Parameter
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter

    @property
    def dim(self) -> int:
        return self.fc_instant_w.shape[0]

    def branch_parameters(self) -> List[Parameter]:
        """The FC and convolution parameters of ``sgp_core`` (norms and FFN excluded)."""
        return [
            self.fc_instant_w, self.fc_instant_b, self.fc_phi_w, self.fc_phi_b,
            self.conv_psi, self.conv_w, self.conv_kw,
        ]

    def parameters(self) -> List[Parameter]:
        return self.branch_parameters() + [
            self.ln_gamma, self.ln_beta, self.gn_gamma, self.gn_beta,
            self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
        ]


@dataclass
class ConvBlockParams:
    """Parameters of the convolutional baseline block."""
    ln_gamma: Parameter
    ln_beta: Parameter
    conv1: Parameter
    fc1_w: Parameter
    fc1_b: Parameter
    conv2: Parameter
    fc2_w: Parameter
    fc2_b: Parameter

    def parameters(self) -> List[Parameter]:
        return [self.ln_gamma, self.ln_beta, self.conv1, self.fc1_w, self.fc1_b, self.conv2, self.fc2_w, self.fc2_b]


BlockParams = Union[SgpLayerParams, ConvBlockParams]


def _normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)


def init_sgp_params(
    dim: int,
    window: int,
    scale: float,
    ffn_ratio: int,
    groups: int,
    rng: np.random.Generator,
    prefix: str = "sgp",
) -> SgpLayerParams:
    """
    Draw SGP parameters: weights from N(0, 1/fan_in), biases zero, affine gamma one.

    Raises:
        ConfigurationError: If the window is not odd, the scale is below 1 or the
            group count does not divide ``dim``
    """
    check = validate_odd_window(window)
    if not check:
        raise ConfigurationError(f"{prefix}: {check.message}", error_code="EVEN_WINDOW")
    if scale < 1:
        raise ConfigurationError(f"{prefix}: scale must be >= 1, got {scale}", error_code="BAD_SCALE")
    check = validate_groups(dim, groups)
    if not check:
        raise ConfigurationError(f"{prefix}: {check.message}", error_code="BAD_GROUPS")
    kw = round_to_odd(scale * window)
    hidden = ffn_ratio * dim
    return SgpLayerParams(
        window=window,
        kw_window=kw,
        groups=groups,
        fc_instant_w=Parameter(_normal(rng, (dim, dim), dim), f"{prefix}.fc_instant.w"),
        fc_instant_b=Parameter(np.zeros(dim), f"{prefix}.fc_instant.b"),
        fc_phi_w=Parameter(_normal(rng, (dim, dim), dim), f"{prefix}.fc_phi.w"),
        fc_phi_b=Parameter(np.zeros(dim), f"{prefix}.fc_phi.b"),
        conv_psi=Parameter(_normal(rng, (dim, window), window), f"{prefix}.conv_psi"),
        conv_w=Parameter(_normal(rng, (dim, window), window), f"{prefix}.conv_w"),
        conv_kw=Parameter(_normal(rng, (dim, kw), kw), f"{prefix}.conv_kw"),
        ln_gamma=Parameter(np.ones(dim), f"{prefix}.ln.gamma"),
        ln_beta=Parameter(np.zeros(dim), f"{prefix}.ln.beta"),
        gn_gamma=Parameter(np.ones(dim), f"{prefix}.gn.gamma"),
        gn_beta=Parameter(np.zeros(dim), f"{prefix}.gn.beta"),
        ffn_w1=Parameter(_normal(rng, (dim, hidden), dim), f"{prefix}.ffn.w1"),
        ffn_b1=Parameter(np.zeros(hidden), f"{prefix}.ffn.b1"),
        ffn_w2=Parameter(_normal(rng, (hidden, dim), hidden), f"{prefix}.ffn.w2"),
        ffn_b2=Parameter(np.zeros(dim), f"{prefix}.ffn.b2"),
    )


def init_conv_block_params(dim: int, ffn_ratio: int, rng: np.random.Generator, prefix: str = "conv") -> ConvBlockParams:
    hidden = ffn_ratio * dim
    return ConvBlockParams(
        ln_gamma=Parameter(np.ones(dim), f"{prefix}.ln.gamma"),
        ln_beta=Parameter(np.zeros(dim), f"{prefix}.ln.beta"),
        conv1=Parameter(_normal(rng, (dim, 3), 3), f"{prefix}.conv1"),
        fc1_w=Parameter(_normal(rng, (dim, hidden), dim), f"{prefix}.fc1.w"),
        fc1_b=Parameter(np.zeros(hidden), f"{prefix}.fc1.b"),
        conv2=Parameter(_normal(rng, (hidden, 3), 3), f"{prefix}.conv2"),
        fc2_w=Parameter(_normal(rng, (hidden, dim), hidden), f"{prefix}.fc2.w"),
        fc2_b=Parameter(np.zeros(dim), f"{prefix}.fc2.b"),
    )


def sgp_core(x: Tensor, p: SgpLayerParams) -> Tensor:
    """
    phi(x) * FC(x) + psi(x) * (Conv_w(x) + Conv_kw(x)) + x.

    phi is computed on the temporal mean and broadcast over all instants.

    Raises:
        DimensionError: If ``x`` does not have ``p.dim`` channels
    """
    phi = relu(fc_forward(global_avg_pool(x), p.fc_phi_w, p.fc_phi_b))
    instant = phi * fc_forward(x, p.fc_instant_w, p.fc_instant_b)
    psi = depthwise_conv1d(x, p.conv_psi, p.window)
    window = psi * (depthwise_conv1d(x, p.conv_w, p.window) + depthwise_conv1d(x, p.conv_kw, p.kw_window))
    return instant + window + x


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return fc_forward(relu(fc_forward(x, w1, b1)), w2, b2)


def sgp_block(x: Tensor, p: SgpLayerParams) -> Tensor:
    """z = y + FFN(GN(y)) with y = sgp_core(LN(x))."""
    y = sgp_core(layer_norm(x, p.ln_gamma, p.ln_beta), p)
    return y + ffn(group_norm(y, p.groups, p.gn_gamma, p.gn_beta), p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2)


def conv_block(x: Tensor, p: ConvBlockParams) -> Tensor:
    """Baseline: x + FC(DW3(ReLU(FC(DW3(LN(x)))))), the separable form of two window-3 convolutions."""
    h = layer_norm(x, p.ln_gamma, p.ln_beta)
    h = relu(fc_forward(depthwise_conv1d(h, p.conv1, 3), p.fc1_w, p.fc1_b))
    h = fc_forward(depthwise_conv1d(h, p.conv2, 3), p.fc2_w, p.fc2_b)
    return x + h


def apply_block(x: Tensor, p: BlockParams) -> Tensor:
    if isinstance(p, SgpLayerParams):
        return sgp_block(x, p)
    return conv_block(x, p)


def sgp_receptive_radius(window: int, scale: float, include_psi: bool = True) -> int:
    """Bound on how far (in instants) a change at t0 reaches in ``sgp_core`` output, with phi held fixed."""
    radius = (round_to_odd(scale * window) - 1) // 2
    if include_psi:
        radius += (window - 1) // 2
    return radius


def zero_branches(p: SgpLayerParams, also: Optional[List[Parameter]] = None) -> None:
    """Set every branch parameter (and optionally extra ones) to zero in place."""
    for param in p.branch_parameters() + list(also or []):
        param.data[...] = 0.0
