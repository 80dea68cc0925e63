"""Manipulation-pair synthesis: enlarge and rotate one solid label component in place.

A trial samples a handful of positions, keeps the largest 4-connected component they
hit, rejects non-solid components, and scales/rotates the component about its centroid.
The trial succeeds when the transformed component covers the original one; the image
and label map are then re-rendered with the transformed component pasted on top.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .key_sampler import MAX_SEED
from .tensor_io import (
    ArgumentError,
    Coord,
    Image,
    LabelMap,
    Source,
    bilinear_gather,
    require_same_shape,
    round_half_up,
    save_image,
    save_label_map,
)

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
RECORDS_FILE = "records.jsonl"


@dataclass(frozen=True)
class SynthConfig:
    positions_per_trial: int = 10
    solidity_threshold: float = 0.8
    scale_range: tuple[float, float] = (1.2, 1.5)
    rotation_range_deg: float = 15.0
    hull_ratio_gate: bool = False
    max_iters: int = 50

    def __post_init__(self) -> None:
        if self.positions_per_trial < 1:
            raise ArgumentError("positions_per_trial must be >= 1")
        if not 0 < self.solidity_threshold <= 1:
            raise ArgumentError("solidity_threshold must lie in (0, 1]")
        low, high = self.scale_range
        if not 0 < low <= high:
            raise ArgumentError("scale_range must satisfy 0 < low <= high")
        if self.rotation_range_deg < 0:
            raise ArgumentError("rotation_range_deg must be >= 0")
        if self.max_iters < 0:
            raise ArgumentError("max_iters must be >= 0")


@dataclass(frozen=True)
class Region:
    """A 4-connected set of same-label pixels."""

    pixels: np.ndarray
    label: int

    def __post_init__(self) -> None:
        pixels = np.array(self.pixels, dtype=bool)
        if pixels.ndim != 2 or not pixels.any():
            raise ArgumentError("Region must be a non-empty 2-D pixel set")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.pixels))

    @property
    def centroid(self) -> Coord:
        ys, xs = np.nonzero(self.pixels)
        return Coord(float(ys.mean()), float(xs.mean()))


@dataclass(frozen=True)
class AffineSample:
    """Scale and rotation about ``pivot``."""

    scale: float
    rotation_deg: float
    pivot: Coord

    def __post_init__(self) -> None:
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ArgumentError("scale must be a positive finite number")
        if not math.isfinite(self.rotation_deg):
            raise ArgumentError("rotation_deg must be finite")

    def inverse_map(self, ys: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Source positions of output pixels: ``pivot + R(-r)(q - pivot) / s``."""

        theta = math.radians(self.rotation_deg)
        cos, sin = math.cos(theta), math.sin(theta)
        dy = (ys - self.pivot.y) / self.scale
        dx = (xs - self.pivot.x) / self.scale
        return self.pivot.y + cos * dy - sin * dx, self.pivot.x + sin * dy + cos * dx


@dataclass(frozen=True)
class SynthRecord:
    seed: int
    trial: int
    label: int
    area: int
    solidity: float
    scale: float
    rotation_deg: float
    pivot_y: float
    pivot_x: float
    transformed_area: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class SynthPair:
    """The unedited input pair ``(image, labels)`` plus what produced it."""

    image: Image
    labels: LabelMap
    record: SynthRecord
    original: Region
    transformed: Region


def floodfill_component(c: LabelMap, p: tuple[int, int]) -> Region:
    """Maximal 4-connected same-label region containing ``p``."""

    py, px = int(p[0]), int(p[1])
    if not (0 <= py < c.height and 0 <= px < c.width):
        raise ArgumentError(f"position {p} outside {c.height}x{c.width} label map")
    label = int(c.classes[py, px])
    components, _ = ndimage.label(c.classes == label, structure=FOUR_CONNECTED)
    return Region(pixels=components == components[py, px], label=label)


def solidity(g: Region) -> float:
    """Area divided by the convex-hull area of the region's unit pixel squares."""

    ys, xs = np.nonzero(g.pixels)
    corners = np.concatenate(
        [np.stack([ys + oy, xs + ox], axis=1) for oy in (0, 1) for ox in (0, 1)]
    )
    hull = ConvexHull(np.unique(corners, axis=0).astype(np.float64))
    # in 2-D ``volume`` is the enclosed area
    return min(1.0, g.area / hull.volume)


def _largest_component(c: LabelMap, positions: np.ndarray) -> Region:
    best: Optional[Region] = None
    for py, px in positions:
        region = floodfill_component(c, (int(py), int(px)))
        if best is None or region.area > best.area:
            best = region
    return best


def _transformed_region(g: Region, affine: AffineSample) -> tuple[Region, np.ndarray, np.ndarray]:
    height, width = g.pixels.shape
    grid_y, grid_x = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    src_y, src_x = affine.inverse_map(grid_y, grid_x)
    near_y = round_half_up(src_y)
    near_x = round_half_up(src_x)
    inside = (near_y >= 0) & (near_y < height) & (near_x >= 0) & (near_x < width)
    hit = np.zeros((height, width), dtype=bool)
    hit[inside] = g.pixels[near_y[inside], near_x[inside]]
    return Region(pixels=hit, label=g.label), src_y, src_x


def synth_manipulation_pair(
    x: Image,
    c: LabelMap,
    seed: int,
    max_iters: Optional[int] = None,
    cfg: SynthConfig = SynthConfig(),
) -> Optional[SynthPair]:
    """Run up to ``max_iters`` trials; ``None`` when no trial succeeds."""

    require_same_shape("synth_manipulation_pair", x.shape, c.shape)
    if not 0 <= seed < MAX_SEED:
        raise ArgumentError("seed must be an unsigned 64-bit integer")
    trials = cfg.max_iters if max_iters is None else max_iters
    rng = np.random.default_rng(seed)
    low, high = cfg.scale_range

    for trial in range(trials):
        positions = np.stack(
            [
                rng.integers(0, c.height, size=cfg.positions_per_trial),
                rng.integers(0, c.width, size=cfg.positions_per_trial),
            ],
            axis=1,
        )
        g = _largest_component(c, positions)
        ratio = solidity(g)
        if cfg.hull_ratio_gate:
            # hull area / region area is never below 1, so this gate rejects every trial
            if 1.0 / ratio > 0.2:
                logger.debug("trial %d: hull ratio gate rejected component", trial)
                continue
        elif ratio < cfg.solidity_threshold:
            logger.debug("trial %d: solidity %.3f below threshold", trial, ratio)
            continue

        affine = AffineSample(
            scale=float(rng.uniform(low, high)),
            rotation_deg=float(rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg)),
            pivot=g.centroid,
        )
        g_prime, src_y, src_x = _transformed_region(g, affine)
        if not np.all(g_prime.pixels[g.pixels]):
            logger.debug("trial %d: transformed component does not cover the original", trial)
            continue

        labels = np.array(c.classes)
        labels[g_prime.pixels] = g.label
        pixels = np.array(x.data)
        pixels[g_prime.pixels] = bilinear_gather(x.data, src_y[g_prime.pixels], src_x[g_prime.pixels])

        record = SynthRecord(
            seed=int(seed),
            trial=trial,
            label=g.label,
            area=g.area,
            solidity=ratio,
            scale=affine.scale,
            rotation_deg=affine.rotation_deg,
            pivot_y=affine.pivot.y,
            pivot_x=affine.pivot.x,
            transformed_area=g_prime.area,
        )
        logger.info("seed %d: pair synthesised at trial %d (label %d)", seed, trial, g.label)
        return SynthPair(
            image=Image(pixels),
            labels=LabelMap(labels),
            record=record,
            original=g,
            transformed=g_prime,
        )

    logger.info("seed %d: no pair after %d trials", seed, trials)
    return None


def write_pair(out_dir: Source, index: int, pair: SynthPair) -> dict:
    """Write ``<index>_image.png`` and ``<index>_labels.png`` and append to ``records.jsonl``."""

    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    image_name = f"{index:05d}_image.png"
    labels_name = f"{index:05d}_labels.png"
    save_image(pair.image, target / image_name)
    save_label_map(pair.labels, target / labels_name)

    entry = {"index": index, "image": image_name, "labels": labels_name, **asdict(pair.record)}
    try:
        with (target / RECORDS_FILE).open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
    except OSError as exc:
        raise RuntimeError(f"Failed to append to '{target / RECORDS_FILE}': {exc}") from exc
    return entry


__all__ = [
    "AffineSample",
    "Region",
    "SynthConfig",
    "SynthPair",
    "SynthRecord",
    "floodfill_component",
    "solidity",
    "synth_manipulation_pair",
    "write_pair",
]
