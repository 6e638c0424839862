"""Shared fixtures: synthetic imagery and the reference-backend switch."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from matcher_adapters.backends import BACKEND_ENV

# Fiducial dot centers as (x, y) = (sample, line), all at least 36 px from
# the border of a 224x224 frame, pairwise more than 25 px apart, with
# |x - y| >= 20 so a swapped-axis report lands far from every dot, and
# within 4 px of a multiple of 16 in both axes so the fixed query grid of
# the detector-free protocols sees every dot inside one patch.
DOTS = (
    (48, 78), (80, 46), (112, 64), (144, 98), (176, 126),
    (64, 142), (96, 174), (128, 158), (160, 46), (52, 110),
)
FID_SIZE = 224
FID_SHIFT = 6  # image b shows every dot at (x + FID_SHIFT, y)


def smooth_texture(height: int, width: int, seed: int) -> np.ndarray:
    """Band-limited random texture: coarse noise upsampled, fine noise added."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(60.0, 200.0, (height // 8 + 2, width // 8 + 2))
    base = Image.fromarray(coarse.astype(np.float32), mode="F")
    base = base.resize((width, height), Image.BILINEAR)
    img = np.asarray(base, dtype=np.float64)
    img += rng.normal(0.0, 6.0, (height, width))
    return np.clip(img, 0.0, 255.0).astype(np.uint8)


def draw_dots(shift_x: int = 0) -> np.ndarray:
    img = np.zeros((FID_SIZE, FID_SIZE), dtype=np.uint8)
    for x, y in DOTS:
        x = x + shift_x
        img[y - 1:y + 2, x - 1:x + 2] = 170
        img[y, x] = 255
    return img


def save_png(path, arr: np.ndarray) -> None:
    Image.fromarray(arr, mode="L").save(path)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Return (header fields, data array) of an emitted match file."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return header, data


@pytest.fixture()
def reference_backend(monkeypatch):
    monkeypatch.setenv(BACKEND_ENV, "reference")


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    """PNG pair set shared by the contract tests."""
    root = tmp_path_factory.mktemp("imgs")
    save_png(root / "texture.png", smooth_texture(256, 256, seed=7))
    save_png(root / "fid_a.png", draw_dots())
    save_png(root / "fid_b.png", draw_dots(shift_x=FID_SHIFT))
    save_png(root / "big.png", smooth_texture(1024, 1024, seed=19))
    return root
