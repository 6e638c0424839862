"""Tile scheduling: coverage, offset undo, and memory backoff."""

from __future__ import annotations

import numpy as np
import pytest

from matcher_adapters.tiling import MIN_EDGE, iter_tiles, run_tiled


def _fixed_match_runner(calls):
    """Record tile shapes and return one match at local (20, 30)."""

    def runner(tile_a, tile_b):
        calls.append(tile_a.shape)
        return (np.array([[20.0, 30.0]]), np.array([[21.0, 29.0]]),
                np.array([0.5]))

    return runner


def test_tiles_cover_image_without_overlap():
    height, width, tile = 700, 1000, 256
    seen = np.zeros((height, width), dtype=int)
    for y0, x0 in iter_tiles(height, width, tile):
        seen[y0:y0 + tile, x0:x0 + tile] += 1
    assert np.all(seen == 1)


def test_offsets_undone_in_output():
    calls = []
    img = np.zeros((512, 512))
    p1, p2, scores = run_tiled(_fixed_match_runner(calls), img, img, tile=256)
    assert len(calls) == 4
    origins = {(0, 0), (256, 0), (0, 256), (256, 256)}
    got1 = {tuple(row) for row in (p1 - [20.0, 30.0]).astype(int)}
    got2 = {tuple(row) for row in (p2 - [21.0, 29.0]).astype(int)}
    assert got1 == origins
    assert got2 == origins
    assert np.all(scores == 0.5)


def test_slivers_are_skipped():
    calls = []
    img = np.zeros((1030, 260))
    run_tiled(_fixed_match_runner(calls), img, img, tile=256)
    assert len(calls) == 4  # the 6 px and 4 px edge strips never run
    assert all(min(shape) >= MIN_EDGE for shape in calls)


def test_memory_pressure_halves_tiles_with_warning():
    sizes = []

    def moody(tile_a, tile_b):
        sizes.append(max(tile_a.shape))
        if max(tile_a.shape) > 256:
            raise MemoryError("synthetic")
        return (np.array([[10.0, 10.0]]), np.array([[10.0, 10.0]]),
                np.array([1.0]))

    img = np.zeros((600, 600))
    with pytest.warns(RuntimeWarning, match="retrying at"):
        p1, _, _ = run_tiled(moody, img, img, tile=1024)
    assert max(sizes) > 256 and sizes[-1] <= 256
    assert len(p1) == 9  # 3x3 grid of 256 px tiles over 600 px


def test_memory_exhaustion_propagates():
    def hopeless(tile_a, tile_b):
        raise MemoryError("synthetic")

    img = np.zeros((600, 600))
    with pytest.warns(RuntimeWarning):
        with pytest.raises(MemoryError):
            run_tiled(hopeless, img, img, tile=512)
