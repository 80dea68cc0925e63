"""Local layout editing: features, key sampling, sparse warp and masked compositing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .attention import AttentionConfig, WarpResult
from .features import ProviderConfig, load_feature_file, pipeline_features
from .key_sampler import (
    LABEL_PENALTY_MODES,
    KeyIndexSet,
    SamplerConfig,
    SamplingResult,
    ScoreConstraints,
    footprint_hits,
    sample_key_indices,
)
from .sparse_warp import sparse_warp
from .tensor_io import (
    ArgumentError,
    FeatureMap,
    Image,
    LabelMap,
    Mask,
    Source,
    normalize_location_wise,
    require_same_shape,
    round_half_up,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything ``warp_full`` needs besides the inputs themselves.

    ``features_src``/``features_tgt`` point at ``HRT1`` files that replace the built-in
    provider; they must be given together.
    """

    sampler: SamplerConfig = field(default_factory=SamplerConfig.local_edit)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    label_penalty: bool = True
    penalty_value: float = 1e4
    label_penalty_mode: str = "hard"
    soft_penalty_weight: float = 1.0
    reconstruction_mode: bool = False
    dedupe: bool = True
    features_src: Optional[Source] = None
    features_tgt: Optional[Source] = None

    def __post_init__(self) -> None:
        if not self.penalty_value > 0:
            raise ArgumentError("penalty_value must be > 0")
        if self.label_penalty_mode not in LABEL_PENALTY_MODES:
            raise ArgumentError(f"label_penalty_mode must be one of {LABEL_PENALTY_MODES}")
        if (self.features_src is None) != (self.features_tgt is None):
            raise ArgumentError("features_src and features_tgt must be given together")

    def constraints(self, c0: LabelMap, c1: LabelMap, m: Mask) -> ScoreConstraints:
        return ScoreConstraints(
            label_penalty_enabled=self.label_penalty,
            penalty_value=self.penalty_value,
            source_labels=c0,
            target_labels=c1,
            excluded_mask=m if self.reconstruction_mode else None,
            label_penalty_mode=self.label_penalty_mode,
            soft_penalty_weight=self.soft_penalty_weight,
        )


class PairTransform(NamedTuple):
    """Integer translation followed by an optional horizontal flip."""

    dy: int
    dx: int
    flip: bool


class EvalMetrics(NamedTuple):
    l1: float
    psnr: float


@dataclass(frozen=True)
class EditResult:
    """Raw warp ``r``, the composited image and the sampling diagnostics."""

    warp: WarpResult
    composited: Image
    sampling: SamplingResult

    @property
    def warped(self) -> Image:
        return self.warp.warped

    @property
    def evaluations(self) -> int:
        return self.sampling.evaluations


def composite_local(r: Image, x0: Image, m: Mask) -> Image:
    """Warped content inside the mask, ``x0`` untouched outside it."""

    require_same_shape("composite_local", r.shape, x0.shape, m.shape)
    return Image(np.where(m.editable[..., None], r.data, x0.data))


def apply_pair_transform(array: np.ndarray, transform: PairTransform) -> np.ndarray:
    """Apply ``transform`` to any (H, W, ...) array with replicate padding.

    ``out[i, j] = in[clamp(i - dy), flip(clamp(j - dx))]`` where ``flip(v) = W - 1 - v``.
    """

    height, width = array.shape[0], array.shape[1]
    rows = np.clip(np.arange(height) - transform.dy, 0, height - 1)
    cols = np.clip(np.arange(width) - transform.dx, 0, width - 1)
    if transform.flip:
        cols = width - 1 - cols
    return array[rows[:, None], cols[None, :]]


def augment_pair(
    x1: Image,
    c1: LabelMap,
    seed: int,
    *,
    max_shift_fraction: float = 0.25,
    flip_probability: float = 0.5,
) -> tuple[Image, LabelMap, PairTransform]:
    """Random translation in ``[-H/4, H/4] x [-W/4, W/4]`` and a horizontal-flip coin."""

    require_same_shape("augment_pair", x1.shape, c1.shape)
    if not 0 <= max_shift_fraction <= 1:
        raise ArgumentError("max_shift_fraction must lie in [0, 1]")
    if not 0 <= flip_probability <= 1:
        raise ArgumentError("flip_probability must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    max_dy = int(x1.height * max_shift_fraction)
    max_dx = int(x1.width * max_shift_fraction)
    transform = PairTransform(
        dy=int(rng.integers(-max_dy, max_dy, endpoint=True)),
        dx=int(rng.integers(-max_dx, max_dx, endpoint=True)),
        flip=bool(rng.random() < flip_probability),
    )
    return (
        Image(apply_pair_transform(x1.data, transform)),
        LabelMap(apply_pair_transform(c1.classes, transform)),
        transform,
    )


def resolve_features(
    x0: Image,
    c0: LabelMap,
    c1: LabelMap,
    cfg: PipelineConfig,
    features: Optional[tuple[FeatureMap, FeatureMap]] = None,
) -> tuple[FeatureMap, FeatureMap]:
    """``(u_x, u_c)`` from explicit maps, the configured ``HRT1`` files, or the provider."""

    if features is not None:
        u_x, u_c = (normalize_location_wise(f) for f in features)
    elif cfg.features_src is not None:
        u_x, u_c = load_feature_file(cfg.features_src), load_feature_file(cfg.features_tgt)
    else:
        return pipeline_features(x0, c0, c1, cfg.provider)

    require_same_shape("source features", x0.shape, u_x.shape)
    require_same_shape("target features", c1.shape, u_c.shape)
    if u_x.channels != u_c.channels:
        raise ArgumentError(f"channel mismatch: u_x has {u_x.channels}, u_c has {u_c.channels}")
    return u_x, u_c


def warp_full(
    x0: Image,
    c0: LabelMap,
    c1: LabelMap,
    m: Mask,
    cfg: PipelineConfig = PipelineConfig(),
    features: Optional[tuple[FeatureMap, FeatureMap]] = None,
) -> EditResult:
    """Warp ``x0`` onto the layout ``c1`` and composite it inside ``m``.

    ``features`` overrides the configured feature source with ``(u_x, u_c)``.
    """

    require_same_shape("warp_full", x0.shape, c0.shape, c1.shape, m.shape)
    u_x, u_c = resolve_features(x0, c0, c1, cfg, features)
    sc = cfg.constraints(c0, c1, m)

    sampling = sample_key_indices(u_x, u_c, cfg.sampler, sc)
    warp = sparse_warp(
        x0, u_x, u_c, sampling.keys, cfg.attention, sc,
        dedupe=cfg.dedupe, evaluations=sampling.evaluations,
    )
    composited = composite_local(warp.warped, x0, m)
    logger.info(
        "warped %dx%d image, %d editable pixels, %d evaluations",
        x0.height, x0.width, int(m.editable.sum()), sampling.evaluations,
    )
    return EditResult(warp=warp, composited=composited, sampling=sampling)


def eval_metrics(a: Image, b: Image, region: Optional[Mask] = None) -> EvalMetrics:
    """Mean absolute error and PSNR over ``region``; PSNR is ``inf`` for identical inputs."""

    require_same_shape("eval_metrics", a.shape, b.shape)
    if region is None:
        selected = np.ones(a.shape, dtype=bool)
    else:
        require_same_shape("eval_metrics region", a.shape, region.shape)
        selected = region.editable
    if not selected.any():
        raise ArgumentError("evaluation region is empty")

    diff = a.data[selected] - b.data[selected]
    l1 = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return EvalMetrics(l1=l1, psnr=psnr)


def top1_label_agreement(sampling: SamplingResult, c0: LabelMap, c1: LabelMap) -> float:
    """Fraction of queries whose best particle lands on a source pixel of the same label."""

    ys, xs, _ = sampling.best_particles()
    src_y = np.clip(round_half_up(ys), 0, c0.height - 1)
    src_x = np.clip(round_half_up(xs), 0, c0.width - 1)
    return float(np.mean(c0.classes[src_y, src_x] == c1.classes))


def footprint_violations(keys: KeyIndexSet, mask: Mask) -> int:
    """Number of live keys whose bilinear footprint touches ``mask``."""

    hits = footprint_hits(mask, keys.ys, keys.xs)
    return int(np.count_nonzero(hits & keys.valid))


__all__ = [
    "EditResult",
    "EvalMetrics",
    "PairTransform",
    "PipelineConfig",
    "apply_pair_transform",
    "augment_pair",
    "composite_local",
    "resolve_features",
    "eval_metrics",
    "footprint_violations",
    "top1_label_agreement",
    "warp_full",
]
