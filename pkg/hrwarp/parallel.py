"""Row-block scheduling shared by the dense and sparse kernels."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

T = TypeVar("T")

DEFAULT_BLOCK_ROWS = 16


def row_blocks(height: int, block_rows: int) -> List[tuple[int, int]]:
    """Split ``range(height)`` into ``[start, stop)`` blocks of ``block_rows`` rows."""

    step = max(1, int(block_rows))
    return [(start, min(start + step, height)) for start in range(0, height, step)]


def map_row_blocks(
    fn: Callable[[int, int], T],
    height: int,
    *,
    block_rows: int = DEFAULT_BLOCK_ROWS,
    threads: int = 1,
) -> List[T]:
    """Apply ``fn(start, stop)`` to every row block and return results in block order.

    Block boundaries depend only on ``block_rows``; ``threads`` changes scheduling,
    never the arithmetic.
    """

    blocks = row_blocks(height, block_rows)
    if threads <= 1 or len(blocks) <= 1:
        return [fn(start, stop) for start, stop in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda bounds: fn(*bounds), blocks))


__all__ = ["DEFAULT_BLOCK_ROWS", "map_row_blocks", "row_blocks"]
