"""
Detector assembly: embedding, feature pyramid and heads behind one parameter registry.
"""

import json
from collections import OrderedDict
from typing import Dict, List, Mapping, Union

import numpy as np
from loguru import logger

from components.feature_pyramid import (
    EmbedParams,
    PyramidFeatures,
    build_pyramid,
    embed,
    init_embed_params,
)
from components.sgp_layer import BlockParams, init_conv_block_params, init_sgp_params
from components.tensor_core import Parameter, Tensor
from components.trident_head import HeadOutputs, HeadParams, init_head_params, run_heads
from config.train_config import TrainConfig, config_from_dict
from utils.exceptions import ConfigurationError, DimensionError, FormatError


class TriDetModel:
    """
    One-stage temporal action detector.

    Parameters are drawn in a fixed order from ``np.random.default_rng(cfg.seed)``,
    so two models built from the same configuration are bitwise identical.
    """

    def __init__(self, cfg: TrainConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.embed: EmbedParams = init_embed_params(cfg.input_dim, cfg.embed_dim, rng)
        self.blocks: List[BlockParams] = []
        for level in range(1, cfg.num_levels + 1):
            prefix = f"level{level}"
            if cfg.block_type == "sgp":
                block = init_sgp_params(
                    cfg.embed_dim, cfg.sgp_window, cfg.sgp_scale, cfg.ffn_ratio, cfg.gn_groups, rng, prefix
                )
            else:
                block = init_conv_block_params(cfg.embed_dim, cfg.ffn_ratio, rng, prefix)
            self.blocks.append(block)
        self.heads: HeadParams = init_head_params(
            cfg.embed_dim,
            cfg.num_classes,
            cfg.num_bins,
            rng,
            use_trident=cfg.use_trident_head,
            detach_boundary=cfg.detach_boundary,
            boundary_init_std=cfg.boundary_init_std,
            cls_prior_prob=cfg.cls_prior_prob,
        )
        logger.debug(f"Built {cfg.block_type} detector with {self.num_parameters()} parameters")

    def parameters(self) -> List[Parameter]:
        params = list(self.embed.parameters())
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend(self.heads.parameters())
        return params

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def pyramid(self, features: Union[np.ndarray, Tensor]) -> PyramidFeatures:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise DimensionError(
                f"Expected features of shape [T, {self.cfg.input_dim}], got {x.shape}",
                error_code="DIM_MISMATCH",
            )
        return build_pyramid(embed(x, self.embed), self.blocks)

    def forward(self, features: Union[np.ndarray, Tensor]) -> HeadOutputs:
        return run_heads(self.pyramid(features), self.heads)

    __call__ = forward

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((p.name, p.data.copy()) for p in self.parameters())

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """
        Copy named arrays into the parameters.

        Raises:
            FormatError: If names or shapes do not match this architecture
        """
        params: Dict[str, Parameter] = {p.name: p for p in self.parameters()}
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise FormatError(
                f"Checkpoint does not match the architecture (missing {missing[:3]}, unexpected {unexpected[:3]})",
                error_code="STATE_MISMATCH",
                details={"missing": missing, "unexpected": unexpected},
            )
        arrays = {name: np.asarray(value, dtype=np.float64) for name, value in state.items()}
        wrong = {name: (arrays[name].shape, p.shape) for name, p in params.items() if arrays[name].shape != p.shape}
        if wrong:
            name, (got, want) = next(iter(wrong.items()))
            raise FormatError(
                f"{name}: checkpoint shape {got} != parameter shape {want} ({len(wrong)} mismatched)",
                error_code="STATE_MISMATCH",
                details={"mismatched": sorted(wrong)},
            )
        # nothing is written until every shape has been checked
        for name, p in params.items():
            p.data[...] = arrays[name]

    @classmethod
    def from_checkpoint(cls, config_json: str, state: Mapping[str, np.ndarray]) -> "TriDetModel":
        try:
            cfg = config_from_dict(json.loads(config_json), apply_env=False)
        except json.JSONDecodeError as e:
            raise FormatError(f"Checkpoint config echo is not JSON: {e}", error_code="BAD_CONFIG")
        except ConfigurationError as e:
            raise FormatError(f"Checkpoint config echo is invalid: {e.message}", error_code="BAD_CONFIG")
        model = cls(cfg)
        model.load_state(state)
        return model
