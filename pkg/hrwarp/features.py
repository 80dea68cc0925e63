"""Deterministic feature providers standing in for learned cross-domain extractors."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from .tensor_io import (
    ArgumentError,
    FeatureMap,
    Image,
    LabelMap,
    Source,
    bilinear_gather,
    load_tensor,
    normalize_array,
    normalize_location_wise,
    require_same_shape,
)

logger = logging.getLogger(__name__)

RAW_IMAGE_CHANNELS = 7

# Frozen projection from the 7 raw statistics; editing it changes every handcrafted feature.
MIXING_TABLE = np.array(
    [
        [0.4967, -0.1383, 0.6477, 1.5230, -0.2342, -0.2341, 1.5792, 0.7674, -0.4695, 0.5426, -0.4634, -0.4657, 0.2420, -1.9133, -1.7249, -0.5623],
        [-1.0128, 0.3142, -0.9080, -1.4123, 1.4656, -0.2258, 0.0675, -1.4247, -0.5444, 0.1109, -1.1510, 0.3757, -0.6006, -0.2917, -0.6017, 1.8523],
        [-0.0135, -1.0577, 0.8225, -1.2208, 0.2089, -1.9597, -1.3282, 0.1969, 0.7385, 0.1714, -0.1156, -0.3011, -1.4785, -0.7198, -0.4606, 1.0571],
        [0.3436, -1.7630, 0.3241, -0.3851, -0.6769, 0.6117, 1.0310, 0.9313, -0.8392, -0.3092, 0.3313, 0.9755, -0.4791, -0.1856, -1.1063, -1.1962],
        [0.8125, 1.3562, -0.0720, 1.0035, 0.3616, -0.6451, 0.3614, 1.5380, -0.0358, 1.5646, -2.6197, 0.8219, 0.0870, -0.2990, 0.0918, -1.9876],
        [-0.2197, 0.3571, 1.4779, -0.5183, -0.8085, -0.5018, 0.9154, 0.3287, -0.5298, 0.5133, 0.0971, 0.9686, -0.7021, -0.3277, -0.3921, -1.4635],
        [0.2961, 0.2611, 0.0051, -0.2346, -1.4154, -0.4206, -0.3427, -0.8022, -0.1612, 0.4040, 1.8861, 0.1745, 0.2575, -0.0744, -1.9187, -0.0265],
    ]
)
MIXING_TABLE.setflags(write=False)
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ProviderConfig:
    """Settings of the handcrafted feature provider."""

    patch_radius: int = 2
    descriptor_dims: int = 16
    class_count: Optional[int] = None
    guidance_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.patch_radius < 0:
            raise ArgumentError("patch_radius must be >= 0")
        if self.descriptor_dims < 3:
            raise ArgumentError("descriptor_dims must be >= 3")
        if self.class_count is not None and not 1 <= self.class_count <= 256:
            raise ArgumentError("class_count must lie in [1, 256]")
        if self.guidance_weight < 0:
            raise ArgumentError("guidance_weight must be >= 0")


@functools.lru_cache(maxsize=None)
def mixing_table(dims: int) -> np.ndarray:
    """Column-normalised projection from the raw statistics to ``dims`` channels.

    Columns past the frozen table reuse its columns with the rows rolled.
    """

    base_dims = MIXING_TABLE.shape[1]
    columns = [np.roll(MIXING_TABLE[:, j % base_dims], j // base_dims) for j in range(dims)]
    table = np.stack(columns, axis=1)
    table /= np.linalg.norm(table, axis=0, keepdims=True)
    table.setflags(write=False)
    return table


def _box_mean(values: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.uniform_filter(values, size=2 * radius + 1, mode="nearest")


def _central_gradients(luma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(luma, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    return gx, gy


def raw_image_statistics(x: Image, patch_radius: int) -> np.ndarray:
    """Per-location patch statistics, shape (H, W, 7).

    Channels: centred colour means (3), signed vertical gradient mean, absolute
    horizontal and vertical gradient means, luminance spread about the local mean. All
    of them are invariant under a horizontal mirror of the patch.
    """

    rgb = x.data
    colour = np.stack([_box_mean(rgb[..., k], patch_radius) for k in range(3)], axis=-1)
    colour -= rgb.reshape(-1, 3).mean(axis=0)

    luma = rgb @ LUMA
    gx, gy = _central_gradients(luma)
    deviation = luma - _box_mean(luma, patch_radius)

    stats = [
        _box_mean(gy, patch_radius),
        _box_mean(np.abs(gx), patch_radius),
        _box_mean(np.abs(gy), patch_radius),
        np.sqrt(_box_mean(deviation * deviation, patch_radius)),
    ]
    return np.concatenate([colour, np.stack(stats, axis=-1)], axis=-1)


def handcrafted_image_features(x: Image, cfg: ProviderConfig = ProviderConfig()) -> FeatureMap:
    """Patch colour and gradient descriptors projected to ``descriptor_dims`` channels."""

    raw = raw_image_statistics(x, cfg.patch_radius)
    projected = raw @ mixing_table(cfg.descriptor_dims)
    return FeatureMap(normalize_array(projected))


def resolve_class_count(*label_maps: LabelMap) -> int:
    """Smallest class count covering every id in ``label_maps``."""

    return int(max(int(labels.classes.max()) for labels in label_maps)) + 1


def label_onehot_features(c: LabelMap, cfg: ProviderConfig = ProviderConfig()) -> FeatureMap:
    """One-hot encode class ids, then normalise every location."""

    class_count = cfg.class_count if cfg.class_count is not None else resolve_class_count(c)
    if int(c.classes.max()) >= class_count:
        raise ArgumentError(
            f"class id {int(c.classes.max())} out of range for class_count={class_count}"
        )
    onehot = np.eye(class_count, dtype=np.float64)[c.classes]
    return FeatureMap(normalize_array(onehot))


def _align_corner_axis(source: int, target: int) -> np.ndarray:
    if target == 1:
        return np.zeros(1)
    return np.arange(target, dtype=np.float64) * ((source - 1) / (target - 1))


def upsample_features(
    lowres: FeatureMap,
    guidance: Union[Image, LabelMap, None],
    target_h: int,
    target_w: int,
    cfg: ProviderConfig = ProviderConfig(),
) -> FeatureMap:
    """Bilinearly upsample ``lowres`` and append guidance channels at target resolution."""

    if target_h < lowres.height or target_w < lowres.width:
        raise ArgumentError(
            f"target {target_h}x{target_w} is smaller than source {lowres.height}x{lowres.width}"
        )

    ys = _align_corner_axis(lowres.height, target_h)
    xs = _align_corner_axis(lowres.width, target_w)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    channels = [bilinear_gather(lowres.data, grid_y, grid_x)]

    if isinstance(guidance, Image):
        require_same_shape("upsample guidance", (target_h, target_w), guidance.shape)
        channels.append(cfg.guidance_weight * handcrafted_image_features(guidance, cfg).data)
    elif isinstance(guidance, LabelMap):
        require_same_shape("upsample guidance", (target_h, target_w), guidance.shape)
        channels.append(cfg.guidance_weight * label_onehot_features(guidance, cfg).data)
    elif guidance is not None:
        raise ArgumentError(f"Unsupported guidance type {type(guidance).__name__}")

    return FeatureMap(normalize_array(np.concatenate(channels, axis=-1)))


def pipeline_features(
    x0: Image,
    c0: LabelMap,
    c1: LabelMap,
    cfg: ProviderConfig = ProviderConfig(),
) -> tuple[FeatureMap, FeatureMap]:
    """Build ``(u_x, u_c)``: source labels and target labels, both guided by ``x0``."""

    require_same_shape("pipeline features", x0.shape, c0.shape, c1.shape)
    if cfg.class_count is None:
        cfg = ProviderConfig(
            patch_radius=cfg.patch_radius,
            descriptor_dims=cfg.descriptor_dims,
            class_count=resolve_class_count(c0, c1),
            guidance_weight=cfg.guidance_weight,
        )
    height, width = x0.shape
    u_x = upsample_features(label_onehot_features(c0, cfg), x0, height, width, cfg)
    u_c = upsample_features(label_onehot_features(c1, cfg), x0, height, width, cfg)
    logger.debug("pipeline features built with %d channels", u_x.channels)
    return u_x, u_c


def load_feature_file(path: Source) -> FeatureMap:
    """Ingest an externally computed ``HRT1`` feature map and normalise it."""

    return normalize_location_wise(load_tensor(path))


__all__ = [
    "ProviderConfig",
    "handcrafted_image_features",
    "label_onehot_features",
    "load_feature_file",
    "mixing_table",
    "pipeline_features",
    "raw_image_statistics",
    "resolve_class_count",
    "upsample_features",
]
