"""Tile scheduling for large pairs: offset undo and memory backoff.

Images larger than the tile size are matched tile by tile over a shared
grid (same origin in both images), and each tile's matches are shifted
back into full-image coordinates.  A ``MemoryError`` from the underlying
matcher halves the tile size and retries, down to the minimum tile;
edges too small to carry a patch are skipped.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterator

import numpy as np

from .spec import MIN_TILE

MIN_EDGE = 32

Runner = Callable[[np.ndarray, np.ndarray],
                  tuple[np.ndarray, np.ndarray, np.ndarray]]


def iter_tiles(height: int, width: int, tile: int) -> Iterator[tuple[int, int]]:
    """Yield (y0, x0) origins of a non-overlapping tile grid."""
    for y0 in range(0, height, tile):
        for x0 in range(0, width, tile):
            yield y0, x0


def _single_pass(runner: Runner, img_a: np.ndarray, img_b: np.ndarray,
                 tile: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    height = max(img_a.shape[0], img_b.shape[0])
    width = max(img_a.shape[1], img_b.shape[1])
    if height <= tile and width <= tile:
        p1, p2, scores = runner(img_a, img_b)
        return (np.asarray(p1, dtype=float).reshape(-1, 2),
                np.asarray(p2, dtype=float).reshape(-1, 2),
                np.asarray(scores, dtype=float).reshape(-1))
    parts1: list[np.ndarray] = []
    parts2: list[np.ndarray] = []
    parts_s: list[np.ndarray] = []
    for y0, x0 in iter_tiles(height, width, tile):
        tile_a = img_a[y0:y0 + tile, x0:x0 + tile]
        tile_b = img_b[y0:y0 + tile, x0:x0 + tile]
        if min(tile_a.shape[:2] + tile_b.shape[:2], default=0) < MIN_EDGE:
            continue
        p1, p2, scores = runner(tile_a, tile_b)
        p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
        if len(p1) == 0:
            continue
        offset = np.array([x0, y0], dtype=float)
        parts1.append(p1 + offset)
        parts2.append(np.asarray(p2, dtype=float).reshape(-1, 2) + offset)
        parts_s.append(np.asarray(scores, dtype=float).reshape(-1))
    if not parts1:
        return np.empty((0, 2)), np.empty((0, 2)), np.empty(0)
    return (np.concatenate(parts1), np.concatenate(parts2),
            np.concatenate(parts_s))


def run_tiled(runner: Runner, img_a: np.ndarray, img_b: np.ndarray,
              tile: int, min_tile: int = MIN_TILE
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Match a pair through ``runner``, tiling and backing off on OOM."""
    size = int(tile)
    while True:
        try:
            return _single_pass(runner, img_a, img_b, size)
        except MemoryError:
            smaller = size // 2
            if smaller < min_tile:
                raise
            warnings.warn(
                f"matcher ran out of memory at tile size {size}, "
                f"retrying at {smaller}",
                RuntimeWarning, stacklevel=2)
            size = smaller
