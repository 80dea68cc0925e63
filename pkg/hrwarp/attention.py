"""Dense attention warping oracle and the cycle-consistency metric."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .key_sampler import KeyIndexSet
from .parallel import map_row_blocks
from .tensor_io import (
    ArgumentError,
    Coord,
    FeatureMap,
    Image,
    bilinear_gather,
    normalize_array,
    require_same_shape,
)

logger = logging.getLogger(__name__)

DENSE_BLOCK_QUERIES = 256


class SizeCapError(RuntimeError):
    """Raised when a dense operation would exceed the configured pixel cap."""

    def __init__(self, pixels: int, cap: int):
        super().__init__(
            f"dense attention over {pixels} pixels exceeds dense_size_cap={cap}; "
            "pass --force-dense to override"
        )
        self.pixels = pixels
        self.cap = cap


@dataclass(frozen=True)
class AttentionConfig:
    """Softmax temperature and dense-op guard."""

    gamma: float = 100.0
    dense_size_cap: int = 16384
    allow_oversize: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ArgumentError("gamma must be a positive finite number")
        if self.dense_size_cap < 1:
            raise ArgumentError("dense_size_cap must be >= 1")
        if self.threads < 1:
            raise ArgumentError("threads must be >= 1")


@dataclass(frozen=True)
class CorrespondenceField:
    """Per-query integer argmax coordinates and their scores."""

    ys: np.ndarray
    xs: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class WarpResult:
    """Warped image plus the attention that produced it.

    ``keys`` and ``weights`` are absent for dense warps unless requested; for sparse
    warps ``weights`` has shape (H, W, K) aligned with ``keys``.
    """

    warped: Image
    weight_sums: np.ndarray
    keys: Optional[KeyIndexSet] = None
    weights: Optional[np.ndarray] = None
    evaluations: int = 0


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax; ``-inf`` entries receive zero weight."""

    peak = np.max(logits, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    weights = np.exp(logits - peak)
    return weights / np.sum(weights, axis=axis, keepdims=True)


def check_dense_size(pixels: int, cfg: AttentionConfig) -> None:
    if pixels > cfg.dense_size_cap and not cfg.allow_oversize:
        raise SizeCapError(pixels, cfg.dense_size_cap)


def _check_channels(u_c: FeatureMap, u_x: FeatureMap) -> None:
    if u_c.channels != u_x.channels:
        raise ArgumentError(f"channel mismatch: u_c has {u_c.channels}, u_x has {u_x.channels}")


def similarity(u_c: FeatureMap, u_x: FeatureMap, q: tuple[int, int], t: Coord) -> float:
    """Inner product of ``u_c(q)`` with ``u_x`` bilinearly sampled at ``t``."""

    _check_channels(u_c, u_x)
    qy, qx = int(q[0]), int(q[1])
    if not (0 <= qy < u_c.height and 0 <= qx < u_c.width):
        raise ArgumentError(f"query {q} outside {u_c.height}x{u_c.width} grid")
    if not (math.isfinite(t.y) and math.isfinite(t.x)):
        raise ArgumentError(f"Coordinate must be finite, got {tuple(t)}")
    sampled = bilinear_gather(u_x.data, np.asarray(t.y), np.asarray(t.x))
    return float(np.sum(u_c.data[qy, qx].astype(np.float64) * sampled))


def _flat(feature_map: FeatureMap) -> np.ndarray:
    return feature_map.data.reshape(-1, feature_map.channels).astype(np.float64)


def _score_block(query_flat: np.ndarray, key_flat: np.ndarray, start: int, stop: int) -> np.ndarray:
    return query_flat[start:stop] @ key_flat.T


def dense_warp(
    x: Image,
    u_x: FeatureMap,
    u_c: FeatureMap,
    cfg: AttentionConfig = AttentionConfig(),
    *,
    return_weights: bool = False,
) -> WarpResult:
    """Warp ``x`` with softmax(gamma * s) over every source pixel."""

    _check_channels(u_c, u_x)
    require_same_shape("dense_warp source", x.shape, u_x.shape)
    check_dense_size(max(u_x.height * u_x.width, u_c.height * u_c.width), cfg)

    queries = _flat(u_c)
    keys = _flat(u_x)
    pixels = x.data.reshape(-1, 3)
    n_queries = queries.shape[0]

    def run(start: int, stop: int):
        weights = stable_softmax(cfg.gamma * _score_block(queries, keys, start, stop))
        return weights @ pixels, weights.sum(axis=1), weights if return_weights else None

    blocks = map_row_blocks(run, n_queries, block_rows=DENSE_BLOCK_QUERIES, threads=cfg.threads)
    warped = np.concatenate([block[0] for block in blocks]).reshape(u_c.height, u_c.width, 3)
    sums = np.concatenate([block[1] for block in blocks]).reshape(u_c.height, u_c.width)
    weights = np.concatenate([block[2] for block in blocks]) if return_weights else None
    logger.debug("dense warp over %d queries x %d keys", n_queries, keys.shape[0])
    return WarpResult(
        warped=Image(warped),
        weight_sums=sums,
        weights=weights,
        evaluations=n_queries * keys.shape[0],
    )


def dense_argmax_field(
    u_x: FeatureMap,
    u_c: FeatureMap,
    cfg: AttentionConfig = AttentionConfig(),
) -> CorrespondenceField:
    """Exact best-match source pixel per query; ties go to the smallest linear index."""

    _check_channels(u_c, u_x)
    check_dense_size(max(u_x.height * u_x.width, u_c.height * u_c.width), cfg)
    queries = _flat(u_c)
    keys = _flat(u_x)

    def run(start: int, stop: int):
        scores = _score_block(queries, keys, start, stop)
        best = np.argmax(scores, axis=1)
        return best, scores[np.arange(stop - start), best]

    blocks = map_row_blocks(run, queries.shape[0], block_rows=DENSE_BLOCK_QUERIES, threads=cfg.threads)
    best = np.concatenate([block[0] for block in blocks])
    scores = np.concatenate([block[1] for block in blocks])
    shape = (u_c.height, u_c.width)
    return CorrespondenceField(
        ys=(best // u_x.width).reshape(shape),
        xs=(best % u_x.width).reshape(shape),
        scores=scores.reshape(shape),
    )


def cycle_loss(
    x_low: Image,
    u_x_low: FeatureMap,
    u_c_low: FeatureMap,
    cfg: AttentionConfig = AttentionConfig(),
) -> float:
    """Squared distance between the forward warp and its forward-backward warp.

    Both warps use the same similarity matrix: rows for the forward pass and columns
    (the transposed similarity) for the backward pass.
    """

    _check_channels(u_c_low, u_x_low)
    require_same_shape("cycle_loss", x_low.shape, u_x_low.shape, u_c_low.shape)
    check_dense_size(u_x_low.height * u_x_low.width, cfg)

    scores = _flat(u_c_low) @ _flat(u_x_low).T
    forward_weights = stable_softmax(cfg.gamma * scores, axis=1)
    backward_weights = stable_softmax(cfg.gamma * scores.T, axis=1)

    forward = forward_weights @ x_low.data.reshape(-1, 3)
    cycle = backward_weights @ forward
    residual = forward - cycle
    return float(np.sum(residual * residual))


def downsample_area(
    value: Union[Image, FeatureMap],
    factor: int = 4,
) -> Union[Image, FeatureMap]:
    """Average-pool by ``factor``; feature maps are re-normalised after pooling.

    Trailing rows and columns that do not fill a whole cell are dropped.
    """

    if factor < 1:
        raise ArgumentError("downsample factor must be >= 1")
    data = value.data.astype(np.float64)
    height, width = data.shape[0] // factor, data.shape[1] // factor
    if height < 1 or width < 1:
        raise ArgumentError(f"cannot downsample {data.shape[:2]} by {factor}")
    cropped = data[: height * factor, : width * factor]
    pooled = cropped.reshape(height, factor, width, factor, -1).mean(axis=(1, 3))
    if isinstance(value, Image):
        return Image(pooled)
    return FeatureMap(normalize_array(pooled))


__all__ = [
    "AttentionConfig",
    "CorrespondenceField",
    "SizeCapError",
    "WarpResult",
    "check_dense_size",
    "cycle_loss",
    "dense_argmax_field",
    "dense_warp",
    "downsample_area",
    "similarity",
    "stable_softmax",
]
