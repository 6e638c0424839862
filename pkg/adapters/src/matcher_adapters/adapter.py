"""One adapter run: load the pair, match, normalize, write the CSV.

The emitted CSV is the only boundary with downstream consumers: header
``x1,y1,x2,y2,score``, 0-based full-image pixel coordinates with
x = sample and y = line, sub-pixel decimals allowed, UTF-8, LF line
endings, scores in [0, 1].
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backends import load_runner
from .errors import ImageReadError
from .spec import MAX_DENSE_MATCHES, AdapterSpec
from .tiling import run_tiled


def load_gray(path) -> np.ndarray:
    """Read an image as float32 grayscale."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("F"), dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc


def normalize_matches(spec: AdapterSpec, dims_a: tuple[int, int],
                      dims_b: tuple[int, int], p1: np.ndarray, p2: np.ndarray,
                      scores: np.ndarray | None
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Enforce the output contract on raw backend matches.

    Drops non-finite and out-of-bounds rows, clamps scores into [0, 1],
    applies the score threshold, and subsamples dense-warp methods to
    the highest-confidence ``MAX_DENSE_MATCHES`` rows.
    """
    p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
    p2 = np.asarray(p2, dtype=float).reshape(-1, 2)
    keep = np.isfinite(p1).all(axis=1) & np.isfinite(p2).all(axis=1)
    wa, ha = dims_a
    wb, hb = dims_b
    keep &= (p1[:, 0] >= 0) & (p1[:, 0] <= wa - 1)
    keep &= (p1[:, 1] >= 0) & (p1[:, 1] <= ha - 1)
    keep &= (p2[:, 0] >= 0) & (p2[:, 0] <= wb - 1)
    keep &= (p2[:, 1] >= 0) & (p2[:, 1] <= hb - 1)
    if scores is not None:
        scores = np.clip(np.asarray(scores, dtype=float).reshape(-1), 0.0, 1.0)
        keep &= scores >= spec.score_threshold
    p1, p2 = p1[keep], p2[keep]
    if scores is not None:
        scores = scores[keep]
    if spec.info.protocol == "densewarp" and len(p1) > MAX_DENSE_MATCHES:
        if scores is not None:
            ranked = np.argsort(-scores, kind="stable")[:MAX_DENSE_MATCHES]
            chosen = np.sort(ranked)
        else:
            chosen = np.arange(MAX_DENSE_MATCHES)
        p1, p2 = p1[chosen], p2[chosen]
        if scores is not None:
            scores = scores[chosen]
    return p1, p2, scores


def write_matches(path, p1: np.ndarray, p2: np.ndarray,
                  scores: np.ndarray | None) -> None:
    header = ["x1", "y1", "x2", "y2"] + (["score"] if scores is not None else [])
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(p1)):
            row = [float(p1[i, 0]), float(p1[i, 1]),
                   float(p2[i, 0]), float(p2[i, 1])]
            if scores is not None:
                row.append(float(scores[i]))
            writer.writerow(row)


def run_adapter(spec: AdapterSpec, image_a, image_b, out) -> int:
    """Match ``image_a`` against ``image_b`` and write the CSV to ``out``.

    Returns the number of correspondences written.
    """
    img_a = load_gray(image_a)
    img_b = load_gray(image_b)
    runner = load_runner(spec)
    p1, p2, scores = run_tiled(runner, img_a, img_b, spec.tile)
    dims_a = (img_a.shape[1], img_a.shape[0])
    dims_b = (img_b.shape[1], img_b.shape[0])
    p1, p2, scores = normalize_matches(spec, dims_a, dims_b, p1, p2, scores)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_matches(out, p1, p2, scores)
    return len(p1)
