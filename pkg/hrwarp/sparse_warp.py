"""Sparse attention over sampled keys and the deformable-style bilinear gather."""

from __future__ import annotations

import logging

import numpy as np

from .attention import AttentionConfig, WarpResult, stable_softmax
from .key_sampler import KeyIndexSet, ScoreConstraints
from .parallel import DEFAULT_BLOCK_ROWS, map_row_blocks
from .tensor_io import (
    ArgumentError,
    FeatureMap,
    Image,
    bilinear_gather,
    require_same_shape,
)

logger = logging.getLogger(__name__)

DEDUPE_RESOLUTION = 8  # keys closer than 1/8 pixel are the same key


def dedupe_keys(keys: KeyIndexSet) -> KeyIndexSet:
    """Drop repeated keys per query, keeping first occurrences in order.

    Two keys are the same when their coordinates agree after rounding to 1/8 pixel.
    """

    if keys.size == 0:
        return keys

    qy = np.floor(keys.ys * DEDUPE_RESOLUTION + 0.5).astype(np.int64)
    qx = np.floor(keys.xs * DEDUPE_RESOLUTION + 0.5).astype(np.int64)
    span = int(qx.max()) - int(qx.min()) + 1
    codes = (qy - qy.min()) * span + (qx - qx.min())
    # already-invalid entries get unique negative codes so they never shadow a live key
    positions = np.arange(keys.size)
    codes = np.where(keys.valid, codes, -1 - positions)

    order = np.argsort(codes, axis=-1, kind="stable")
    ordered = np.take_along_axis(codes, order, axis=-1)
    repeat_sorted = np.zeros(ordered.shape, dtype=bool)
    repeat_sorted[..., 1:] = ordered[..., 1:] == ordered[..., :-1]
    repeat = np.empty_like(repeat_sorted)
    np.put_along_axis(repeat, order, repeat_sorted, axis=-1)

    return KeyIndexSet(ys=keys.ys, xs=keys.xs, scores=keys.scores, valid=keys.valid & ~repeat)


def exhaustive_keys(height: int, width: int) -> KeyIndexSet:
    """Every integer source position as a key of every query (row-major order)."""

    grid_y, grid_x = np.divmod(np.arange(height * width, dtype=np.float64), width)
    shape = (height, width, height * width)
    return KeyIndexSet(
        ys=np.broadcast_to(grid_y, shape).copy(),
        xs=np.broadcast_to(grid_x, shape).copy(),
        scores=np.zeros(shape),
    )


def _constrained_logits(
    u_c: FeatureMap,
    u_x: FeatureMap,
    keys: KeyIndexSet,
    cfg: AttentionConfig,
    sc: ScoreConstraints,
    start: int,
    stop: int,
) -> np.ndarray:
    ys = keys.ys[start:stop]
    xs = keys.xs[start:stop]
    sampled = bilinear_gather(u_x.data.astype(np.float64), ys, xs)
    queries = u_c.data[start:stop, :, None, :].astype(np.float64)
    scores = np.sum(sampled * queries, axis=-1)
    if sc.active:
        qy = np.arange(start, stop)[:, None, None]
        qx = np.arange(u_c.width)[None, :, None]
        scores = scores - sc.penalties(qy, qx, ys, xs)
    return np.where(keys.valid[start:stop], cfg.gamma * scores, -np.inf)


def sparse_attention_field(
    u_c: FeatureMap,
    u_x: FeatureMap,
    keys: KeyIndexSet,
    cfg: AttentionConfig = AttentionConfig(),
    sc: ScoreConstraints = ScoreConstraints(),
    *,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> np.ndarray:
    """Softmax weights for every query over its live keys, shape (H, W, K).

    Invalid (deduplicated) entries get weight 0.
    """

    if u_c.channels != u_x.channels:
        raise ArgumentError(f"channel mismatch: u_c has {u_c.channels}, u_x has {u_x.channels}")
    require_same_shape("sparse attention keys", u_c.shape, (keys.height, keys.width))
    sc.check_shapes(u_x.shape, u_c.shape)
    empty = ~keys.valid.any(axis=-1)
    if keys.size == 0 or empty.any():
        first = np.argwhere(empty)[0] if keys.size else (0, 0)
        raise ArgumentError(f"query {tuple(int(v) for v in first)} has an empty key set")

    def run(start: int, stop: int) -> np.ndarray:
        return stable_softmax(_constrained_logits(u_c, u_x, keys, cfg, sc, start, stop))

    return np.concatenate(map_row_blocks(run, u_c.height, block_rows=block_rows, threads=cfg.threads))


def sparse_attention_weights(
    u_c: FeatureMap,
    u_x: FeatureMap,
    keys: KeyIndexSet,
    q: tuple[int, int],
    cfg: AttentionConfig = AttentionConfig(),
    sc: ScoreConstraints = ScoreConstraints(),
) -> np.ndarray:
    """Softmax(gamma * constrained score) over the live keys of query ``q``."""

    qy, qx = int(q[0]), int(q[1])
    if keys.count((qy, qx)) == 0:
        raise ArgumentError(f"query {(qy, qx)} has an empty key set")
    logits = _constrained_logits(u_c, u_x, keys, cfg, sc, qy, qy + 1)[0, qx]
    return stable_softmax(logits[keys.valid[qy, qx]])


def sparse_attentive_warp(
    x: Image,
    keys: KeyIndexSet,
    weights: np.ndarray,
    *,
    threads: int = 1,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> Image:
    """Gather ``x`` bilinearly at every key and blend with the attention weights.

    Keys are summed in their stored order so the result does not depend on scheduling.
    """

    if weights.shape != keys.ys.shape:
        raise ArgumentError(f"weights shape {weights.shape} does not match keys {keys.ys.shape}")
    pixels = x.data

    def run(start: int, stop: int) -> np.ndarray:
        out = np.zeros((stop - start, keys.width, 3))
        for k in range(keys.size):
            live = weights[start:stop, :, k]
            if not live.any():
                continue
            sample = bilinear_gather(pixels, keys.ys[start:stop, :, k], keys.xs[start:stop, :, k])
            out += live[..., None] * sample
        return out

    warped = np.concatenate(map_row_blocks(run, keys.height, block_rows=block_rows, threads=threads))
    return Image(warped)


def sparse_warp(
    x: Image,
    u_x: FeatureMap,
    u_c: FeatureMap,
    keys: KeyIndexSet,
    cfg: AttentionConfig = AttentionConfig(),
    sc: ScoreConstraints = ScoreConstraints(),
    *,
    dedupe: bool = True,
    evaluations: int = 0,
) -> WarpResult:
    """Attention weights over ``keys`` followed by the gather; returns a ``WarpResult``."""

    require_same_shape("sparse_warp source", x.shape, u_x.shape)
    if dedupe:
        keys = dedupe_keys(keys)
    weights = sparse_attention_field(u_c, u_x, keys, cfg, sc)
    warped = sparse_attentive_warp(x, keys, weights, threads=cfg.threads)
    logger.debug("sparse warp over %d keys per query", keys.size)
    return WarpResult(
        warped=warped,
        weight_sums=weights.sum(axis=-1),
        keys=keys,
        weights=weights,
        evaluations=evaluations,
    )


def keys_to_tensor(keys: KeyIndexSet, weights: np.ndarray) -> FeatureMap:
    """Pack keys and weights as (y, x, weight) triples, shape (H, W, 3K)."""

    if weights.shape != keys.ys.shape:
        raise ArgumentError(f"weights shape {weights.shape} does not match keys {keys.ys.shape}")
    packed = np.stack([keys.ys, keys.xs, np.where(keys.valid, weights, 0.0)], axis=-1)
    return FeatureMap(packed.reshape(keys.height, keys.width, 3 * keys.size))


__all__ = [
    "dedupe_keys",
    "exhaustive_keys",
    "keys_to_tensor",
    "sparse_attention_field",
    "sparse_attention_weights",
    "sparse_attentive_warp",
    "sparse_warp",
]
