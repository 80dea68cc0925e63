"""Key index sampling: initialize-propagate-evaluate-accumulate over particle slots.

Each query ``q`` keeps ``M`` live particles. Every iteration builds a local pool around
each particle, merges the pools of the adjacent queries, keeps the best-scoring
candidate and appends it to the query's key index set. After ``N - 1`` iterations every
query holds ``M * N`` keys.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .parallel import DEFAULT_BLOCK_ROWS, map_row_blocks
from .tensor_io import (
    ArgumentError,
    Coord,
    FeatureMap,
    LabelMap,
    Mask,
    bilinear_gather,
    require_same_shape,
    round_half_up,
)

logger = logging.getLogger(__name__)

PROPAGATION_MODES = ("adjusted", "raw")
LABEL_PENALTY_MODES = ("hard", "soft")
NEIGHBORS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
NEIGHBORS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
MAX_SEED = 2**64


@dataclass(frozen=True)
class SamplerConfig:
    """Iteration counts, search windows and propagation settings."""

    iterations: int = 15
    particle_slots: int = 2
    init_samples: int = 4
    window_w0: Optional[float] = None
    decay_lambda: float = 0.4
    decay_cutoff: int = 10
    extra_propagations: int = 0
    propagation_mode: str = "adjusted"
    neighbor_set: int = 8
    subpixel: bool = False
    seed: int = 0
    threads: int = 1
    block_rows: int = DEFAULT_BLOCK_ROWS

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ArgumentError("iterations (N) must be >= 1")
        if self.particle_slots < 1:
            raise ArgumentError("particle_slots (M) must be >= 1")
        if self.init_samples < 0:
            raise ArgumentError("init_samples (k) must be >= 0")
        if self.window_w0 is not None and not self.window_w0 >= 0:
            raise ArgumentError("window_w0 must be >= 0")
        if not self.decay_lambda >= 0:
            raise ArgumentError("decay_lambda must be >= 0")
        if not 0 <= self.decay_cutoff <= self.iterations:
            raise ArgumentError("decay_cutoff must lie in [0, iterations]")
        if self.extra_propagations < 0:
            raise ArgumentError("extra_propagations must be >= 0")
        if self.propagation_mode not in PROPAGATION_MODES:
            raise ArgumentError(f"propagation_mode must be one of {PROPAGATION_MODES}")
        if self.neighbor_set not in (4, 8):
            raise ArgumentError("neighbor_set must be 4 or 8")
        if not 0 <= self.seed < MAX_SEED:
            raise ArgumentError("seed must be an unsigned 64-bit integer")
        if self.threads < 1 or self.block_rows < 1:
            raise ArgumentError("threads and block_rows must be >= 1")

    @classmethod
    def local_edit(cls, **overrides) -> "SamplerConfig":
        """Preset with the additional propagate-evaluate passes used for local editing."""

        values = {"extra_propagations": 2}
        values.update(overrides)
        return cls(**values)

    @property
    def neighbors(self) -> Sequence[tuple[int, int]]:
        return NEIGHBORS_8 if self.neighbor_set == 8 else NEIGHBORS_4

    def initial_window(self, height: int, width: int) -> float:
        if self.window_w0 is None:
            return float(max(height, width))
        return float(self.window_w0)

    def pool_size(self) -> int:
        """Upper bound on candidates per query per evaluation."""

        return (len(self.neighbors) + 1) * (self.init_samples + 1)


@dataclass(frozen=True)
class ScoreConstraints:
    """Score penalties: label mismatch during local editing, masked sources for reconstruction."""

    label_penalty_enabled: bool = False
    penalty_value: float = 1e4
    source_labels: Optional[LabelMap] = None
    target_labels: Optional[LabelMap] = None
    excluded_mask: Optional[Mask] = None
    label_penalty_mode: str = "hard"
    soft_penalty_weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.penalty_value > 0:
            raise ArgumentError("penalty_value must be > 0")
        if self.label_penalty_mode not in LABEL_PENALTY_MODES:
            raise ArgumentError(f"label_penalty_mode must be one of {LABEL_PENALTY_MODES}")
        if self.label_penalty_enabled and (self.source_labels is None or self.target_labels is None):
            raise ArgumentError("label penalty needs both source_labels and target_labels")

    @property
    def active(self) -> bool:
        return self.label_penalty_enabled or self.excluded_mask is not None

    def check_shapes(self, source_shape: tuple[int, int], target_shape: tuple[int, int]) -> None:
        if self.label_penalty_enabled:
            require_same_shape("source labels", source_shape, self.source_labels.shape)
            require_same_shape("target labels", target_shape, self.target_labels.shape)
        if self.excluded_mask is not None:
            require_same_shape("excluded mask", source_shape, self.excluded_mask.shape)

    def penalties(self, qy: np.ndarray, qx: np.ndarray, ty: np.ndarray, tx: np.ndarray) -> np.ndarray:
        """Amount to subtract from the base score of each (query, candidate) pair."""

        ty = np.asarray(ty, dtype=np.float64)
        tx = np.asarray(tx, dtype=np.float64)
        total = np.zeros(np.broadcast(qy, qx, ty, tx).shape)

        if self.label_penalty_enabled:
            source = self.source_labels.classes
            target = self.target_labels.classes[qy, qx]
            if self.label_penalty_mode == "hard":
                ry = np.clip(round_half_up(ty), 0, source.shape[0] - 1)
                rx = np.clip(round_half_up(tx), 0, source.shape[1] - 1)
                total += np.where(source[ry, rx] != target, self.penalty_value, 0.0)
            else:
                y0, x0, y1, x1, fy, fx = bilinear_footprint(ty, tx, *source.shape)
                agreement = (
                    (1 - fy) * (1 - fx) * (source[y0, x0] == target)
                    + (1 - fy) * fx * (source[y0, x1] == target)
                    + fy * (1 - fx) * (source[y1, x0] == target)
                    + fy * fx * (source[y1, x1] == target)
                )
                # l1 distance between a warped one-hot vector and a one-hot target
                total += self.soft_penalty_weight * 2.0 * (1.0 - agreement)

        if self.excluded_mask is not None:
            total += np.where(footprint_hits(self.excluded_mask, ty, tx), self.penalty_value, 0.0)
        return total


def bilinear_footprint(ty: np.ndarray, tx: np.ndarray, height: int, width: int):
    """Corner indices and fractions of each position's bilinear footprint.

    Corners with zero weight collapse onto ``(y0, x0)`` so the footprint of an integer
    position is the single pixel it names.
    """

    y0 = np.clip(np.floor(ty), 0, height - 1).astype(np.int64)
    x0 = np.clip(np.floor(tx), 0, width - 1).astype(np.int64)
    fy = ty - y0
    fx = tx - x0
    y1 = np.where(fy > 0, np.minimum(y0 + 1, height - 1), y0)
    x1 = np.where(fx > 0, np.minimum(x0 + 1, width - 1), x0)
    return y0, x0, y1, x1, fy, fx


def footprint_hits(mask: Mask, ty: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """True where any pixel of the bilinear footprint lies inside ``mask``."""

    editable = mask.editable
    ty = np.asarray(ty, dtype=np.float64)
    tx = np.asarray(tx, dtype=np.float64)
    y0, x0, y1, x1, _, _ = bilinear_footprint(ty, tx, *editable.shape)
    return editable[y0, x0] | editable[y0, x1] | editable[y1, x0] | editable[y1, x1]


def window_schedule(
    i: int,
    cfg: SamplerConfig,
    height: Optional[int] = None,
    width: Optional[int] = None,
) -> float:
    """Random-search window at iteration ``i``: ``w0 * exp(-lambda * i)`` before the cutoff, else 0."""

    if not 0 <= i < cfg.iterations:
        raise ArgumentError(f"iteration {i} outside [0, {cfg.iterations})")
    if cfg.window_w0 is None and (height is None or width is None):
        raise ArgumentError("window_w0 defaults to max(H, W); pass the grid dimensions")
    if i >= cfg.decay_cutoff:
        return 0.0
    w0 = cfg.initial_window(height or 0, width or 0)
    return w0 * math.exp(-cfg.decay_lambda * i)


def constrained_score(base: float, q: tuple[int, int], t: Coord, sc: ScoreConstraints) -> float:
    """Apply the label and mask penalties of ``sc`` to one score."""

    if not sc.active:
        return float(base)
    qy = np.asarray(int(q[0]))
    qx = np.asarray(int(q[1]))
    penalty = sc.penalties(qy, qx, np.asarray(t.y), np.asarray(t.x))
    return float(base - penalty)


@dataclass(frozen=True)
class KeyIndexSet:
    """Per-query key coordinates, arrays of shape (H, W, K).

    ``valid`` marks live entries; deduplication clears it for repeats instead of
    reshaping, so every query shares the same K.
    """

    ys: np.ndarray
    xs: np.ndarray
    scores: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.valid is None:
            object.__setattr__(self, "valid", np.ones(self.ys.shape, dtype=bool))
        if not (self.ys.shape == self.xs.shape == self.scores.shape == self.valid.shape):
            raise ArgumentError("key arrays must share one (H, W, K) shape")

    @classmethod
    def from_coords(
        cls,
        coords: Sequence[Coord],
        height: int = 1,
        width: int = 1,
        scores: Optional[Sequence[float]] = None,
    ) -> "KeyIndexSet":
        """Give every query of an ``height`` x ``width`` grid the same key list."""

        count = len(coords)
        ys = np.array([c.y for c in coords], dtype=np.float64).reshape(1, 1, count)
        xs = np.array([c.x for c in coords], dtype=np.float64).reshape(1, 1, count)
        cached = np.zeros(count) if scores is None else np.asarray(scores, dtype=np.float64)
        shape = (height, width, count)
        return cls(
            ys=np.broadcast_to(ys, shape).copy(),
            xs=np.broadcast_to(xs, shape).copy(),
            scores=np.broadcast_to(cached.reshape(1, 1, count), shape).copy(),
        )

    @property
    def height(self) -> int:
        return self.ys.shape[0]

    @property
    def width(self) -> int:
        return self.ys.shape[1]

    @property
    def size(self) -> int:
        return self.ys.shape[2]

    def count(self, q: tuple[int, int]) -> int:
        return int(self.valid[q[0], q[1]].sum())

    def coords(self, q: tuple[int, int]) -> List[Coord]:
        live = self.valid[q[0], q[1]]
        return [Coord(float(y), float(x)) for y, x in zip(self.ys[q[0], q[1]][live], self.xs[q[0], q[1]][live])]

    def cached_scores(self, q: tuple[int, int]) -> np.ndarray:
        return self.scores[q[0], q[1]][self.valid[q[0], q[1]]]


@dataclass(frozen=True)
class ParticleField:
    """Live particles per slot, arrays of shape (M, H, W)."""

    ys: np.ndarray
    xs: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class SamplingResult:
    keys: KeyIndexSet
    particles: ParticleField
    evaluations: int

    def best_particles(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Top-1 particle per query across slots; ties go to the lowest slot."""

        slot = np.argmax(self.particles.scores, axis=0)[None]

        def pick(values: np.ndarray) -> np.ndarray:
            return np.take_along_axis(values, slot, axis=0)[0]

        return pick(self.particles.ys), pick(self.particles.xs), pick(self.particles.scores)


def counter_uniforms(seed: int, slot: int, iteration: int, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform [0, 1) block keyed by (seed, slot, iteration), laid out pixel-major.

    Each entry is a pure function of the key and its position in the block, i.e. of the
    linear pixel index and the draw index.
    """

    key = np.array([seed, (slot << 32) | iteration], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random(shape)


class _PoolScorer:
    """Scores candidate pools for a block of query rows."""

    def __init__(self, u_x: FeatureMap, u_c: FeatureMap, sc: ScoreConstraints):
        self.keys = u_x.data.astype(np.float64)
        self.queries = u_c.data.astype(np.float64)
        self.sc = sc
        self.source_shape = u_x.shape

    def score(self, start: int, stop: int, cy: np.ndarray, cx: np.ndarray) -> np.ndarray:
        sampled = bilinear_gather(self.keys, cy, cx)
        base = np.sum(sampled * self.queries[start:stop, :, None, :], axis=-1)
        if self.sc.active:
            qy = np.arange(start, stop)[:, None, None]
            qx = np.arange(self.queries.shape[1])[None, :, None]
            base = base - self.sc.penalties(qy, qx, cy, cx)
        return base


def _initial_particles(
    cfg: SamplerConfig,
    sc: ScoreConstraints,
    slot: int,
    source_shape: tuple[int, int],
    target_shape: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    height, width = source_shape
    draws = counter_uniforms(cfg.seed, slot, 0, (target_shape[0] * target_shape[1], 2))

    if not sc.active:
        if cfg.subpixel:
            ys, xs = draws[:, 0] * (height - 1), draws[:, 1] * (width - 1)
        else:
            ys = np.minimum(np.floor(draws[:, 0] * height), height - 1)
            xs = np.minimum(np.floor(draws[:, 1] * width), width - 1)
        return ys.reshape(target_shape), xs.reshape(target_shape)

    # Constrained runs start from a uniformly drawn feasible source pixel.
    allowed = np.ones(source_shape, dtype=bool)
    if sc.excluded_mask is not None and not sc.excluded_mask.editable.all():
        allowed = ~sc.excluded_mask.editable
    allowed_flat = np.flatnonzero(allowed)
    chosen = allowed_flat[np.minimum((draws[:, 0] * allowed_flat.size).astype(np.int64), allowed_flat.size - 1)]

    if sc.label_penalty_enabled:
        source = sc.source_labels.classes.reshape(-1)
        target = sc.target_labels.classes.reshape(-1)
        for label in np.unique(target):
            candidates = allowed_flat[source[allowed_flat] == label]
            if candidates.size == 0:
                continue
            queries = target == label
            picks = np.minimum((draws[queries, 0] * candidates.size).astype(np.int64), candidates.size - 1)
            chosen[queries] = candidates[picks]

    ys, xs = np.divmod(chosen, width)
    return ys.astype(np.float64).reshape(target_shape), xs.astype(np.float64).reshape(target_shape)


def _local_pools(
    ty: np.ndarray,
    tx: np.ndarray,
    window: float,
    cfg: SamplerConfig,
    slot: int,
    iteration: int,
    source_shape: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Initialize step: the particle followed by ``k`` random draws in its window."""

    height, width = ty.shape
    k = cfg.init_samples
    draws = counter_uniforms(cfg.seed, slot, iteration, (height * width, k, 2)).reshape(height, width, k, 2)
    offsets = window * (2.0 * draws - 1.0)
    ys = ty[..., None] + offsets[..., 0]
    xs = tx[..., None] + offsets[..., 1]
    if not cfg.subpixel:
        ys, xs = np.floor(ys + 0.5), np.floor(xs + 0.5)
    ys = np.clip(ys, 0.0, source_shape[0] - 1.0)
    xs = np.clip(xs, 0.0, source_shape[1] - 1.0)
    return (
        np.concatenate([ty[..., None], ys], axis=-1),
        np.concatenate([tx[..., None], xs], axis=-1),
    )


def _propagate_and_evaluate(
    pool_y: np.ndarray,
    pool_x: np.ndarray,
    scorer: _PoolScorer,
    cfg: SamplerConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Merge neighbouring pools into each query's pool and keep the best candidate.

    ``pool_y``/``pool_x`` have shape (H, W, P) with the live particle at position 0.
    Returns the new particles, their scores and the number of candidates scored.
    """

    height, width, _ = pool_y.shape
    src_h, src_w = scorer.source_shape
    offsets = ((0, 0),) + tuple(cfg.neighbors)
    adjusted = cfg.propagation_mode == "adjusted"

    pad = ((1, 1), (1, 1), (0, 0))
    padded_y = np.pad(pool_y, pad)
    padded_x = np.pad(pool_x, pad)
    inside = np.pad(np.ones((height, width), dtype=bool), 1)

    def run(start: int, stop: int):
        parts_y, parts_x, parts_ok = [], [], []
        for dy, dx in offsets:
            rows = slice(start + 1 + dy, stop + 1 + dy)
            cols = slice(1 + dx, width + 1 + dx)
            cand_y = padded_y[rows, cols]
            cand_x = padded_x[rows, cols]
            if adjusted and (dy or dx):
                cand_y = np.clip(cand_y - dy, 0.0, src_h - 1.0)
                cand_x = np.clip(cand_x - dx, 0.0, src_w - 1.0)
            parts_y.append(cand_y)
            parts_x.append(cand_x)
            parts_ok.append(np.broadcast_to(inside[rows, cols][..., None], cand_y.shape))

        cand_y = np.concatenate(parts_y, axis=-1)
        cand_x = np.concatenate(parts_x, axis=-1)
        ok = np.concatenate(parts_ok, axis=-1)
        scores = np.where(ok, scorer.score(start, stop, cand_y, cand_x), -np.inf)
        best = np.argmax(scores, axis=-1)[..., None]
        return (
            np.take_along_axis(cand_y, best, axis=-1)[..., 0],
            np.take_along_axis(cand_x, best, axis=-1)[..., 0],
            np.take_along_axis(scores, best, axis=-1)[..., 0],
            int(ok.sum()),
        )

    blocks = map_row_blocks(run, height, block_rows=cfg.block_rows, threads=cfg.threads)
    return (
        np.concatenate([b[0] for b in blocks]),
        np.concatenate([b[1] for b in blocks]),
        np.concatenate([b[2] for b in blocks]),
        sum(b[3] for b in blocks),
    )


def _score_particles(ty: np.ndarray, tx: np.ndarray, scorer: _PoolScorer, cfg: SamplerConfig) -> np.ndarray:
    def run(start: int, stop: int):
        return scorer.score(start, stop, ty[start:stop, :, None], tx[start:stop, :, None])[..., 0]

    return np.concatenate(map_row_blocks(run, ty.shape[0], block_rows=cfg.block_rows, threads=cfg.threads))


def sample_key_indices(
    u_x: FeatureMap,
    u_c: FeatureMap,
    cfg: SamplerConfig = SamplerConfig(),
    sc: ScoreConstraints = ScoreConstraints(),
) -> SamplingResult:
    """Run the key index sampling procedure and return keys, particles and the evaluation count."""

    require_same_shape("sample_key_indices", u_x.shape, u_c.shape)
    if u_x.channels != u_c.channels:
        raise ArgumentError(f"channel mismatch: u_x has {u_x.channels}, u_c has {u_c.channels}")
    sc.check_shapes(u_x.shape, u_c.shape)

    height, width = u_c.shape
    slots, n_iter = cfg.particle_slots, cfg.iterations
    scorer = _PoolScorer(u_x, u_c, sc)

    key_ys = np.empty((height, width, n_iter * slots))
    key_xs = np.empty_like(key_ys)
    key_scores = np.empty_like(key_ys)
    particles_y = np.empty((slots, height, width))
    particles_x = np.empty_like(particles_y)
    particles_s = np.empty_like(particles_y)
    evaluations = 0

    for slot in range(slots):
        ty, tx = _initial_particles(cfg, sc, slot, u_x.shape, u_c.shape)
        ts = _score_particles(ty, tx, scorer, cfg)
        key_ys[..., slot], key_xs[..., slot], key_scores[..., slot] = ty, tx, ts

        for i in range(1, n_iter):
            window = window_schedule(i, cfg, height, width)
            pool_y, pool_x = _local_pools(ty, tx, window, cfg, slot, i, u_x.shape)
            ty, tx, ts, scored = _propagate_and_evaluate(pool_y, pool_x, scorer, cfg)
            evaluations += scored
            for _ in range(cfg.extra_propagations):
                ty, tx, ts, scored = _propagate_and_evaluate(ty[..., None], tx[..., None], scorer, cfg)
                evaluations += scored

            column = i * slots + slot
            key_ys[..., column], key_xs[..., column], key_scores[..., column] = ty, tx, ts
            logger.debug("slot %d iteration %d window %.3f mean score %.5f", slot, i, window, float(ts.mean()))

        particles_y[slot], particles_x[slot], particles_s[slot] = ty, tx, ts

    logger.info(
        "sampled %d keys per query on %dx%d grid with %d similarity evaluations",
        n_iter * slots, height, width, evaluations,
    )
    return SamplingResult(
        keys=KeyIndexSet(ys=key_ys, xs=key_xs, scores=key_scores),
        particles=ParticleField(ys=particles_y, xs=particles_x, scores=particles_s),
        evaluations=evaluations,
    )


def expected_evaluations(height: int, width: int, cfg: SamplerConfig) -> int:
    """Closed-form evaluation count of ``sample_key_indices`` on an ``height`` x ``width`` grid."""

    neighbour_total = 0
    for dy, dx in cfg.neighbors:
        neighbour_total += max(0, height - abs(dy)) * max(0, width - abs(dx))
    candidates_per_pass = height * width + neighbour_total
    per_iteration = candidates_per_pass * (cfg.init_samples + 1) + cfg.extra_propagations * candidates_per_pass
    return cfg.particle_slots * (cfg.iterations - 1) * per_iteration


__all__ = [
    "KeyIndexSet",
    "NEIGHBORS_4",
    "NEIGHBORS_8",
    "ParticleField",
    "SamplerConfig",
    "SamplingResult",
    "ScoreConstraints",
    "bilinear_footprint",
    "constrained_score",
    "counter_uniforms",
    "expected_evaluations",
    "footprint_hits",
    "sample_key_indices",
    "window_schedule",
]
