"""Dense-vs-sparse benchmark on synthetic translated-feature instances."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Sequence

import numpy as np

from .attention import AttentionConfig, check_dense_size, dense_argmax_field
from .key_sampler import SamplerConfig, sample_key_indices
from .local_edit import PairTransform, apply_pair_transform
from .tensor_io import ArgumentError, FeatureMap, normalize_array

logger = logging.getLogger(__name__)

BENCH_SHIFT = PairTransform(dy=2, dx=3, flip=False)


@dataclass(frozen=True)
class BenchEntry:
    mode: str
    height: int
    width: int
    pixels: int
    evaluations: int
    seconds: float
    dense_evaluations: int


@dataclass
class BenchReport:
    entries: List[BenchEntry] = field(default_factory=list)

    def to_json_lines(self) -> str:
        return "".join(json.dumps(asdict(entry), sort_keys=True) + "\n" for entry in self.entries)


def translated_features(size: int, channels: int, seed: int) -> tuple[FeatureMap, FeatureMap]:
    """Random per-pixel features and the same features translated by ``BENCH_SHIFT``."""

    rng = np.random.default_rng(seed)
    source = normalize_array(rng.standard_normal((size, size, channels)))
    return FeatureMap(source), FeatureMap(apply_pair_transform(source, BENCH_SHIFT))


def _check_sizes(sizes: Iterable[int]) -> None:
    for size in sizes:
        if size < 1:
            raise ArgumentError(f"benchmark sizes must be positive, got {size}")


def run_bench(
    sizes: Sequence[int],
    cfg: SamplerConfig = SamplerConfig(),
    *,
    dense_sizes: Sequence[int] = (),
    attention: AttentionConfig = AttentionConfig(),
    channels: int = 16,
) -> BenchReport:
    """Time key sampling per size and, for ``dense_sizes``, the dense argmax oracle.

    Dense sizes are checked against the size cap before anything runs.
    """

    _check_sizes(sizes)
    _check_sizes(dense_sizes)
    if channels < 1:
        raise ArgumentError("channels must be >= 1")
    for size in dense_sizes:
        check_dense_size(size * size, attention)

    report = BenchReport()
    for size in sizes:
        u_x, u_c = translated_features(size, channels, cfg.seed)
        started = time.perf_counter()
        result = sample_key_indices(u_x, u_c, cfg)
        elapsed = time.perf_counter() - started
        pixels = size * size
        report.entries.append(
            BenchEntry("sparse", size, size, pixels, result.evaluations, elapsed, pixels * pixels)
        )
        logger.info("sparse %dx%d: %d evaluations in %.3fs", size, size, result.evaluations, elapsed)

    for size in dense_sizes:
        u_x, u_c = translated_features(size, channels, cfg.seed)
        started = time.perf_counter()
        dense_argmax_field(u_x, u_c, attention)
        elapsed = time.perf_counter() - started
        pixels = size * size
        report.entries.append(BenchEntry("dense", size, size, pixels, pixels * pixels, elapsed, pixels * pixels))
        logger.info("dense %dx%d: %d evaluations in %.3fs", size, size, pixels * pixels, elapsed)

    return report


__all__ = ["BenchEntry", "BenchReport", "run_bench", "translated_features"]
