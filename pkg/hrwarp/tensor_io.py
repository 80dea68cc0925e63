"""Grid types, the ``HRT1`` tensor format, PNG ingestion and shared sampling math."""

from __future__ import annotations

import io
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
import requests
from PIL import Image as PILImage

logger = logging.getLogger(__name__)

MAGIC = b"HRT1"
HEADER = struct.Struct("<4sIII")
DEGENERATE_NORM = 1e-12
VALUE_SLACK = 1e-6

Source = Union[str, "os.PathLike[str]"]


class ArgumentError(ValueError):
    """Raised when an operation receives arguments that violate its contract."""


class TensorFormatError(RuntimeError):
    """Raised when an ``HRT1`` payload cannot be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class IngestionError(RuntimeError):
    """Raised when an image, label map or mask cannot be ingested."""


class Coord(NamedTuple):
    """A fractional pixel position, row first."""

    y: float
    x: float


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Image:
    """RGB pixel grid with values in [0, 1], shape (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ArgumentError(f"Image data must have shape (H, W, 3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ArgumentError("Image height and width must be at least 1")
        if not np.all(np.isfinite(data)) or data.min() < -VALUE_SLACK or data.max() > 1.0 + VALUE_SLACK:
            raise ArgumentError("Image values must be finite and lie in [0, 1]")
        # convex blends may overshoot 1.0 by an ulp
        object.__setattr__(self, "data", _frozen(np.clip(data, 0.0, 1.0)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """Integer class ids per pixel, shape (H, W)."""

    classes: np.ndarray

    def __post_init__(self) -> None:
        classes = np.array(self.classes)
        if classes.ndim != 2 or classes.shape[0] < 1 or classes.shape[1] < 1:
            raise ArgumentError(f"LabelMap must be a non-empty 2-D grid, got {classes.shape}")
        if classes.size and (classes.min() < 0 or classes.max() > 255):
            raise ArgumentError("Class ids must lie in [0, 255]")
        object.__setattr__(self, "classes", _frozen(classes.astype(np.int64)))

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape[0], self.classes.shape[1]


@dataclass(frozen=True)
class Mask:
    """Editable region, ``True`` inside the region to modify."""

    editable: np.ndarray

    def __post_init__(self) -> None:
        editable = np.array(self.editable, dtype=bool)
        if editable.ndim != 2 or editable.shape[0] < 1 or editable.shape[1] < 1:
            raise ArgumentError(f"Mask must be a non-empty 2-D grid, got {editable.shape}")
        object.__setattr__(self, "editable", _frozen(editable))

    @property
    def shape(self) -> tuple[int, int]:
        return self.editable.shape[0], self.editable.shape[1]


@dataclass(frozen=True)
class FeatureMap:
    """H x W x C grid of float32 feature vectors, channel-fastest."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ArgumentError(f"FeatureMap data must have shape (H, W, C), got {data.shape}")
        if min(data.shape) < 1:
            raise ArgumentError(f"FeatureMap dimensions must be at least 1, got {data.shape}")
        object.__setattr__(self, "data", _frozen(np.ascontiguousarray(data)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


def require_same_shape(what: str, *shapes: tuple[int, int]) -> None:
    """Raise ``ArgumentError`` unless every (H, W) pair is identical."""

    first = shapes[0]
    for shape in shapes[1:]:
        if tuple(shape) != tuple(first):
            raise ArgumentError(f"{what}: dimension mismatch {tuple(first)} vs {tuple(shape)}")


# ---------------------------------------------------------------------------
# HRT1 tensor format
# ---------------------------------------------------------------------------


def encode_tensor(feature_map: FeatureMap) -> bytes:
    """Serialise a feature map to the ``HRT1`` byte layout."""

    height, width, channels = feature_map.data.shape
    header = HEADER.pack(MAGIC, height, width, channels)
    payload = feature_map.data.astype("<f4", copy=False).tobytes(order="C")
    return header + payload


def decode_tensor(blob: bytes) -> FeatureMap:
    """Parse ``HRT1`` bytes back into a feature map."""

    if len(blob) < 4 or blob[:4] != MAGIC:
        raise TensorFormatError("bad magic", 0)
    if len(blob) < HEADER.size:
        raise TensorFormatError("truncated header", len(blob))

    _, height, width, channels = HEADER.unpack_from(blob, 0)
    for index, value in enumerate((height, width, channels)):
        if value == 0:
            raise TensorFormatError("zero dimension", 4 + 4 * index)

    expected = height * width * channels * 4
    available = len(blob) - HEADER.size
    if available < expected:
        raise TensorFormatError(
            f"truncated payload: expected {expected} bytes, found {available}", len(blob)
        )
    if available > expected:
        raise TensorFormatError("trailing bytes after payload", HEADER.size + expected)

    values = np.frombuffer(blob, dtype="<f4", count=height * width * channels, offset=HEADER.size)
    return FeatureMap(values.astype(np.float32).reshape(height, width, channels))


def save_tensor(feature_map: FeatureMap, path: Source) -> None:
    """Write a feature map to ``path`` in the ``HRT1`` format."""

    target = Path(path)
    try:
        target.write_bytes(encode_tensor(feature_map))
    except OSError as exc:
        raise RuntimeError(f"Failed to write tensor file '{target}': {exc}") from exc
    logger.debug("wrote %s tensor to %s", feature_map.data.shape, target)


def load_tensor(path: Source) -> FeatureMap:
    """Read an ``HRT1`` file from disk."""

    source = Path(path)
    try:
        blob = source.read_bytes()
    except OSError as exc:
        raise IngestionError(f"Failed to read tensor file '{source}': {exc}") from exc
    return decode_tensor(blob)


# ---------------------------------------------------------------------------
# PNG ingestion
# ---------------------------------------------------------------------------


def read_source_bytes(source: Source) -> bytes:
    """Load raw bytes from a local path or an http(s) URL."""

    text = os.fspath(source)
    if text.startswith(("http://", "https://")):
        try:
            response = requests.get(text, timeout=30)
            response.raise_for_status()
        except requests.RequestException as exc:
            raise IngestionError(f"Failed to fetch '{text}': {exc}") from exc
        return response.content

    path = Path(text)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"Failed to read '{path}': {exc}") from exc


def _open_png(source: Source) -> PILImage.Image:
    blob = read_source_bytes(source)
    try:
        picture = PILImage.open(io.BytesIO(blob))
        picture.load()
    except (OSError, ValueError) as exc:
        raise IngestionError(f"Failed to decode image '{os.fspath(source)}': {exc}") from exc
    return picture


def load_image(source: Source) -> Image:
    """Read an 8-bit PNG as an RGB image scaled to [0, 1]."""

    picture = _open_png(source)
    if picture.mode not in {"RGB", "RGBA", "L", "P"}:
        raise IngestionError(f"Unsupported image mode '{picture.mode}'; expected 8-bit RGB")
    rgb = np.asarray(picture.convert("RGB"), dtype=np.float64) / 255.0
    return Image(rgb)


def load_label_map(source: Source) -> LabelMap:
    """Read an 8-bit single-channel PNG; pixel values are class ids."""

    picture = _open_png(source)
    if picture.mode not in {"L", "P"}:
        raise IngestionError(
            f"Label maps must be 8-bit single-channel PNGs, got mode '{picture.mode}'"
        )
    return LabelMap(np.asarray(picture, dtype=np.uint8))


def load_mask(source: Source) -> Mask:
    """Read an 8-bit gray PNG; nonzero pixels are editable."""

    picture = _open_png(source)
    if picture.mode not in {"L", "P", "1"}:
        raise IngestionError(f"Masks must be 8-bit gray PNGs, got mode '{picture.mode}'")
    return Mask(np.asarray(picture) != 0)


def _write_png(array: np.ndarray, path: Source) -> None:
    target = Path(path)
    try:
        PILImage.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(target, format="PNG")
    except OSError as exc:
        raise RuntimeError(f"Failed to write PNG '{target}': {exc}") from exc


def save_image(image: Image, path: Source) -> None:
    pixels = np.floor(image.data * 255.0 + 0.5).astype(np.uint8)
    _write_png(pixels, path)


def save_label_map(labels: LabelMap, path: Source) -> None:
    _write_png(labels.classes.astype(np.uint8), path)


def save_mask(mask: Mask, path: Source) -> None:
    _write_png(mask.editable.astype(np.uint8) * 255, path)


# ---------------------------------------------------------------------------
# Numeric primitives
# ---------------------------------------------------------------------------


def round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def bilinear_gather(grid: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``grid`` (H, W, C) at clamped fractional positions.

    ``ys`` and ``xs`` share any shape S; the result has shape S + (C,) in float64.
    Integer positions return the stored vectors exactly.
    """

    height, width = grid.shape[0], grid.shape[1]
    flat = grid.reshape(height * width, -1)
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)

    y0 = np.clip(np.floor(ys), 0, height - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, width - 1).astype(np.int64)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]

    if not (np.any(fy) or np.any(fx)):
        return np.take(flat, y0 * width + x0, axis=0).astype(np.float64, copy=False)

    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    v00 = np.take(flat, y0 * width + x0, axis=0).astype(np.float64, copy=False)
    v01 = np.take(flat, y0 * width + x1, axis=0).astype(np.float64, copy=False)
    v10 = np.take(flat, y1 * width + x0, axis=0).astype(np.float64, copy=False)
    v11 = np.take(flat, y1 * width + x1, axis=0).astype(np.float64, copy=False)
    top = (1.0 - fx) * v00 + fx * v01
    bottom = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bottom


def bilinear_sample(feature_map: FeatureMap, t: Coord) -> np.ndarray:
    """Bilinearly interpolate one feature vector at ``t``."""

    if not (math.isfinite(t.y) and math.isfinite(t.x)):
        raise ArgumentError(f"Coordinate must be finite, got {tuple(t)}")
    return bilinear_gather(feature_map.data, np.asarray(t.y), np.asarray(t.x))


def normalize_array(data: np.ndarray) -> np.ndarray:
    """Per-location zero channel mean and unit l2 norm; degenerate locations become 0."""

    values = np.asarray(data, dtype=np.float64)
    centered = values - values.mean(axis=-1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=-1, keepdims=True))
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    return np.where(degenerate, 0.0, centered / safe)


def normalize_location_wise(feature_map: FeatureMap) -> FeatureMap:
    return FeatureMap(normalize_array(feature_map.data))


__all__ = [
    "ArgumentError",
    "Coord",
    "FeatureMap",
    "Image",
    "IngestionError",
    "LabelMap",
    "Mask",
    "TensorFormatError",
    "bilinear_gather",
    "bilinear_sample",
    "decode_tensor",
    "encode_tensor",
    "load_image",
    "load_label_map",
    "load_mask",
    "load_tensor",
    "normalize_array",
    "normalize_location_wise",
    "read_source_bytes",
    "require_same_shape",
    "round_half_up",
    "save_image",
    "save_label_map",
    "save_mask",
    "save_tensor",
]
