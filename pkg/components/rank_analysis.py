"""
Rank-collapse diagnostics for softmax self-attention.

When the convex hull of a point set excludes the origin, any convex
combination of the points cannot widen the largest angle between two of
them. A softmax attention matrix is row-stochastic, so attention with an
identity value map contracts that angle too. ``verify_angle_contraction``
fuzzes this claim; ``cosine_similarity_profile`` tracks how quickly a
stack of attention layers (or SGP blocks) makes all instants look alike.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from components.sgp_layer import SgpLayerParams, init_sgp_params, sgp_block
from components.tensor_core import Tensor, matmul, no_grad, softmax
from utils.exceptions import ConfigurationError, DataValidationError, DimensionError, DomainError
from utils.validators import validate_stochastic_rows

ANGLE_SLACK = 1e-9
LAYER_KINDS = ("self_attention", "sgp")


@dataclass
class PointSet:
    """n points in R^d as rows."""
    points: np.ndarray
    excludes_origin: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] < 1:
            raise DataValidationError(
                f"PointSet needs an n x d array with n, d >= 1, got shape {self.points.shape}",
                error_code="BAD_POINTS",
            )

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def max_pairwise_angle(ps: PointSet) -> float:
    """
    Largest angle (radians) between any two position vectors.

    Uses 2 * atan2(|u - v|, |u + v|) on unit vectors, which equals the clamped
    arccos of the cosine and stays accurate near 0 and pi.

    Raises:
        DomainError: If any point is the zero vector
    """
    norms = np.linalg.norm(ps.points, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DomainError(f"Point {int(zero[0])} is the zero vector", error_code="ZERO_VECTOR")
    unit = ps.points / norms[:, None]
    diff = np.linalg.norm(unit[:, None, :] - unit[None, :, :], axis=2)
    summ = np.linalg.norm(unit[:, None, :] + unit[None, :, :], axis=2)
    return float((2.0 * np.arctan2(diff, summ)).max())


def convex_combine(ps: PointSet, weights: np.ndarray) -> PointSet:
    """
    Rows of ``weights`` (m x n, row-stochastic) mix the n points into m new ones.

    Raises:
        DimensionError: If the weight matrix does not have n columns
        DataValidationError: If a row is negative or does not sum to 1 within 1e-12
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != ps.n:
        raise DimensionError(
            f"Weights of shape {weights.shape} cannot combine {ps.n} points",
            error_code="DIM_MISMATCH",
        )
    check = validate_stochastic_rows(weights)
    if not check:
        raise DataValidationError(check.message, error_code="NOT_STOCHASTIC")
    return PointSet(weights @ ps.points, excludes_origin=ps.excludes_origin)


def random_stochastic_matrix(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn from a flat Dirichlet distribution."""
    return rng.dirichlet(np.ones(n), size=m)


def origin_excluding_points(n: int, d: int, rng: np.random.Generator, offset: float = 0.5) -> PointSet:
    """Gaussian points whose first coordinate is made strictly positive (|x| + offset)."""
    points = rng.normal(size=(n, d))
    points[:, 0] = np.abs(points[:, 0]) + offset
    return PointSet(points, excludes_origin=True)


# ------------------------------------------------------------ self-attention
def attention_weights(x: Tensor, Wq: Tensor, Wk: Tensor) -> Tensor:
    """softmax((x Wq)(x Wk)^T / sqrt(D)), row-stochastic [T, T]."""
    q = matmul(x, Wq)
    k = matmul(x, Wk)
    return softmax(matmul(q, k.T) * (1.0 / np.sqrt(x.shape[1])), axis=-1)


def self_attention_forward(x: Tensor, Wq: Tensor, Wk: Tensor, Wv: Tensor) -> Tensor:
    return matmul(attention_weights(x, Wq, Wk), matmul(x, Wv))


def random_attention_params(dim: int, rng: np.random.Generator, identity_value: bool = True) -> Tuple[Tensor, Tensor, Tensor]:
    scale = np.sqrt(1.0 / dim)
    Wq = Tensor(rng.normal(0.0, scale, size=(dim, dim)))
    Wk = Tensor(rng.normal(0.0, scale, size=(dim, dim)))
    Wv = Tensor(np.eye(dim) if identity_value else rng.normal(0.0, scale, size=(dim, dim)))
    return Wq, Wk, Wv


# ------------------------------------------------------------ verification
@dataclass
class AngleContractionReport:
    records: pd.DataFrame
    violations: int
    worst_margin: float

    @property
    def trials(self) -> int:
        return int(self.records["trial"].nunique()) if not self.records.empty else 0

    @property
    def passed(self) -> bool:
        return self.violations == 0


def verify_angle_contraction(
    trials: int = 1000,
    n_range: Tuple[int, int] = (2, 32),
    d_range: Tuple[int, int] = (2, 16),
    seed: int = 0,
) -> AngleContractionReport:
    """
    Fuzz angle contraction under random stochastic mixing and softmax attention (identity values).

    Each trial yields two records (mixing = "stochastic" and "attention"). A record is a
    violation when the angle after mixing exceeds the angle before by more than 1e-9.
    ``worst_margin`` is the largest (after - before) seen; it is <= 0 for a contraction.
    """
    if trials < 1 or n_range[0] < 1 or d_range[0] < 1 or n_range[0] > n_range[1] or d_range[0] > d_range[1]:
        raise ConfigurationError(
            f"Invalid fuzz ranges: trials={trials}, n_range={n_range}, d_range={d_range}",
            error_code="BAD_RANGE",
        )
    rng = np.random.default_rng(seed)
    rows: List[Dict] = []
    with no_grad():
        for trial in range(trials):
            n = int(rng.integers(n_range[0], n_range[1] + 1))
            d = int(rng.integers(d_range[0], d_range[1] + 1))
            ps = origin_excluding_points(n, d, rng)
            before = max_pairwise_angle(ps)
            Wq, Wk, _ = random_attention_params(d, rng)
            mixes = {
                "stochastic": random_stochastic_matrix(n, n, rng),
                "attention": attention_weights(Tensor(ps.points), Wq, Wk).numpy(),
            }
            for mixing, weights in mixes.items():
                after = max_pairwise_angle(convex_combine(ps, weights))
                rows.append({
                    "trial": trial,
                    "n": n,
                    "d": d,
                    "mixing": mixing,
                    "angle_before": before,
                    "angle_after": after,
                    "violation_flag": int(after > before + ANGLE_SLACK),
                })
    records = pd.DataFrame(rows, columns=["trial", "n", "d", "mixing", "angle_before", "angle_after", "violation_flag"])
    violations = int(records["violation_flag"].sum())
    worst = float((records["angle_after"] - records["angle_before"]).max())
    if violations:
        logger.warning(f"Angle contraction violated in {violations} of {len(records)} mixes (worst margin {worst:.3e})")
    else:
        logger.info(f"Angle contraction held in all {len(records)} mixes (worst margin {worst:.3e})")
    return AngleContractionReport(records, violations, worst)


# ------------------------------------------------------------------ profiles
def mean_cosine_to_mean(x: np.ndarray) -> float:
    """Average cosine similarity between each instant and the temporal mean feature."""
    mean = x.mean(axis=0)
    norms = np.linalg.norm(x, axis=1) * np.linalg.norm(mean)
    return float(np.mean((x @ mean) / np.where(norms > 0, norms, 1.0)))


def near_identical_inputs(T: int, D: int, rng: np.random.Generator, noise: float = 0.1) -> np.ndarray:
    """Rows share one positive vector (|N(0,1)| + 1) plus small Gaussian noise."""
    shared = np.abs(rng.normal(size=D)) + 1.0
    return shared[None, :] + noise * rng.normal(size=(T, D))


def profile_sgp_params(dim: int, rng: np.random.Generator, groups: int = 1) -> SgpLayerParams:
    """
    SGP block used in depth profiles: window 3, scale 1.5, FFN ratio 1.

    Fully-connected weights are N(0, 1/D). Depthwise kernels are N(0, 1/w) for
    their own window w (3, and 5 for the wider window). Gains start at one,
    shifts and biases at zero.
    """
    return init_sgp_params(dim, 3, 1.5, 1, groups, rng, prefix="profile")


def cosine_similarity_profile(
    x: np.ndarray,
    layer: str,
    depth: int,
    rng: np.random.Generator,
    groups: int = 4,
) -> List[float]:
    """
    Apply one randomly initialized layer ``depth`` times; report the statistic before and after each pass.

    Args:
        x: [T, D] input features
        layer: "self_attention" (identity values) or "sgp" (window 3, scale 1.5)
        depth: Number of applications
        rng: Generator for the layer's parameters; see ``profile_sgp_params`` and
            ``random_attention_params`` for their scales
        groups: Group count of the SGP block's group norm

    Returns:
        depth + 1 values; index 0 is the input's statistic
    """
    if layer not in LAYER_KINDS:
        raise ConfigurationError(f"Unknown layer kind {layer!r}; expected one of {LAYER_KINDS}", error_code="BAD_LAYER")
    D = x.shape[1]
    h = Tensor(x)
    profile = [mean_cosine_to_mean(h.data)]
    with no_grad():
        if layer == "self_attention":
            Wq, Wk, Wv = random_attention_params(D, rng)
        else:
            params = profile_sgp_params(D, rng, groups)
        for _ in range(depth):
            h = self_attention_forward(h, Wq, Wk, Wv) if layer == "self_attention" else sgp_block(h, params)
            profile.append(mean_cosine_to_mean(h.data))
    return profile


def compare_depth_profiles(
    trials: int = 100,
    depth: int = 4,
    num_instants: int = 32,
    dim: int = 16,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Seeded trials of both stacks on the same near-identical input.

    Returns:
        Long table with columns trial, depth, layer_kind, mean_cosine
    """
    rows = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        x = near_identical_inputs(num_instants, dim, rng)
        for kind in LAYER_KINDS:
            for k, value in enumerate(cosine_similarity_profile(x, kind, depth, rng)):
                rows.append({"trial": trial, "depth": k, "layer_kind": kind, "mean_cosine": value})
    return pd.DataFrame(rows, columns=["trial", "depth", "layer_kind", "mean_cosine"])


def summarize_profiles(profiles: pd.DataFrame) -> pd.DataFrame:
    """Mean statistic per (depth, layer_kind)."""
    return (
        profiles.groupby(["depth", "layer_kind"], sort=True)["mean_cosine"].mean()
        .reset_index()[["depth", "layer_kind", "mean_cosine"]]
    )


def profile_gap_wins(profiles: pd.DataFrame, depth: int) -> int:
    """Trials in which the SGP stack's statistic is strictly below self-attention's at ``depth``."""
    at_depth = profiles[profiles["depth"] == depth].pivot(index="trial", columns="layer_kind", values="mean_cosine")
    return int((at_depth["sgp"] < at_depth["self_attention"]).sum())


def attention_monotone_trials(profiles: pd.DataFrame, tol: float = 1e-12) -> int:
    """Trials whose self-attention profile never decreases with depth (within ``tol``)."""
    sa = profiles[profiles["layer_kind"] == "self_attention"].sort_values(["trial", "depth"])
    count = 0
    for _, group in sa.groupby("trial", sort=True):
        values = group["mean_cosine"].to_numpy()
        count += int(np.all(np.diff(values) >= -tol))
    return count
