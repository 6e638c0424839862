"""Correlation-based reference backend.

A dependency-light matcher used for plumbing tests and CI where no
pretrained network is installed: variance peaks (or a fixed grid, for
the detector-free protocols) provide query points in the first image,
and normalized cross-correlation over a local search window finds the
conjugate in the second, with a mutual-consistency check.  It is a real
matcher for near-registered pairs, not a stub, but it searches only a
small neighbourhood and has no learned invariance, so it is never the
default; select it explicitly with ``MATCHER_ADAPTERS_BACKEND=reference``.

Grid queries are anchored at fixed multiples of the grid step, so a
tile whose origin is a multiple of the step sees the same global query
positions as an untiled run.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PATCH = 11
SEARCH = 24
GRID_STEP = 16
BORDER = 16
MIN_PATCH_STD = 2.0
MUTUAL_TOL = 1.5
VARIANCE_WINDOW = 9


def _box_sum(img: np.ndarray, win: int) -> np.ndarray:
    """Exact win-by-win box sums, zero outside the valid interior."""
    c = np.cumsum(np.cumsum(img, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    if c.shape[0] <= win or c.shape[1] <= win:
        return np.zeros_like(img)
    s = c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]
    out = np.zeros_like(img)
    h = win // 2
    out[h:h + s.shape[0], h:h + s.shape[1]] = s
    return out


def local_variance(img: np.ndarray, win: int = VARIANCE_WINDOW) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    n = win * win
    s1 = _box_sum(img, win)
    s2 = _box_sum(img * img, win)
    return np.maximum(s2 / n - (s1 / n) ** 2, 0.0)


def _centroid_refine(response: np.ndarray, x: float, y: float,
                     radius: int = 5, iters: int = 8) -> tuple[float, float]:
    """Mean-shift a keypoint to the local response centroid.

    Flat response plateaus (a small symmetric blob fully inside the
    variance window) leave the raw argmax up to the plateau radius off
    center; iterating toward the windowed centroid settles on the center
    of symmetric features and barely moves asymmetric ones.
    """
    fx, fy = float(x), float(y)
    for _ in range(iters):
        cx, cy = int(round(fx)), int(round(fy))
        xa, xb = max(cx - radius, 0), min(cx + radius + 1, response.shape[1])
        ya, yb = max(cy - radius, 0), min(cy + radius + 1, response.shape[0])
        patch = response[ya:yb, xa:xb]
        total = patch.sum()
        if total <= 0.0:
            break
        gy, gx = np.mgrid[ya:yb, xa:xb]
        nx = float((patch * gx).sum() / total)
        ny = float((patch * gy).sum() / total)
        done = abs(nx - fx) < 1e-3 and abs(ny - fy) < 1e-3
        fx, fy = nx, ny
        if done:
            break
    return fx, fy


def detect_keypoints(img: np.ndarray, max_pts: int = 400,
                     min_dist: int = 8, border: int = BORDER) -> np.ndarray:
    """Top local-variance maxima with greedy min-distance suppression.

    Returns an (n, 2) array of (x, y) positions sorted by decreasing
    response, each refined to the local response centroid; deterministic
    for identical inputs.
    """
    var = local_variance(img)
    if min(var.shape) <= 2 * border + 2:
        return np.empty((0, 2))
    var[:border, :] = 0.0
    var[-border:, :] = 0.0
    var[:, :border] = 0.0
    var[:, -border:] = 0.0
    core = var[1:-1, 1:-1]
    is_max = core > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= core >= var[1 + dy:var.shape[0] - 1 + dy,
                                  1 + dx:var.shape[1] - 1 + dx]
    ys, xs = np.nonzero(is_max)
    ys = ys + 1
    xs = xs + 1
    vals = var[ys, xs]
    if len(vals) > 20 * max_pts:
        top = np.argpartition(-vals, 20 * max_pts)[:20 * max_pts]
        ys, xs, vals = ys[top], xs[top], vals[top]
    order = np.argsort(-vals, kind="stable")
    kept_x: list[int] = []
    kept_y: list[int] = []
    buckets: dict[tuple[int, int], list[int]] = {}
    cell = max(min_dist, 1)
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        bx, by = x // cell, y // cell
        clear = True
        for ny in (by - 1, by, by + 1):
            for nx in (bx - 1, bx, bx + 1):
                for j in buckets.get((ny, nx), ()):
                    if (kept_x[j] - x) ** 2 + (kept_y[j] - y) ** 2 < min_dist ** 2:
                        clear = False
                        break
                if not clear:
                    break
            if not clear:
                break
        if clear:
            buckets.setdefault((by, bx), []).append(len(kept_x))
            kept_x.append(x)
            kept_y.append(y)
            if len(kept_x) >= max_pts:
                break
    if not kept_x:
        return np.empty((0, 2))
    # refinement can pull neighbouring detections onto the same feature,
    # so the spacing rule is enforced again on the refined positions
    out_x: list[float] = []
    out_y: list[float] = []
    for x, y in zip(kept_x, kept_y):
        fx, fy = _centroid_refine(var, x, y)
        if all((fx - ox) ** 2 + (fy - oy) ** 2 >= min_dist ** 2
               for ox, oy in zip(out_x, out_y)):
            out_x.append(fx)
            out_y.append(fy)
    return np.column_stack([out_x, out_y])


def grid_keypoints(shape: tuple[int, int], step: int = GRID_STEP,
                   border: int = BORDER) -> np.ndarray:
    """Regular query grid anchored at global multiples of ``step``."""
    h, w = shape
    first_x = ((border + step - 1) // step) * step
    first_y = ((border + step - 1) // step) * step
    xs = np.arange(first_x, w - border, step)
    ys = np.arange(first_y, h - border, step)
    if len(xs) == 0 or len(ys) == 0:
        return np.empty((0, 2))
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]).astype(float)


def _patch_vector(img: np.ndarray, x: int, y: int) -> tuple[np.ndarray, float] | None:
    half = PATCH // 2
    if not (half <= x < img.shape[1] - half and half <= y < img.shape[0] - half):
        return None
    p = img[y - half:y + half + 1, x - half:x + half + 1].astype(np.float64)
    z = p.ravel() - p.mean()
    norm = float(np.linalg.norm(z))
    if norm < MIN_PATCH_STD * PATCH:
        return None
    return z, norm


def _ncc_best(img: np.ndarray, patch_z: np.ndarray, patch_norm: float,
              cx: int, cy: int, search: int) -> tuple[int, int, float] | None:
    half = PATCH // 2
    y_lo = max(cy - search, half)
    y_hi = min(cy + search, img.shape[0] - 1 - half)
    x_lo = max(cx - search, half)
    x_hi = min(cx + search, img.shape[1] - 1 - half)
    if y_lo > y_hi or x_lo > x_hi:
        return None
    region = img[y_lo - half:y_hi + half + 1, x_lo - half:x_hi + half + 1]
    win = sliding_window_view(region, (PATCH, PATCH))
    ny, nx = win.shape[:2]
    flat = win.reshape(ny * nx, PATCH * PATCH).astype(np.float64)
    centered = flat - flat.mean(axis=1, keepdims=True)
    denom = np.linalg.norm(centered, axis=1) * patch_norm
    scores = centered @ patch_z
    scores = np.where(denom > 1e-9, scores / np.maximum(denom, 1e-9), -2.0)
    k = int(np.argmax(scores))
    best = float(scores[k])
    if best <= -2.0:
        return None
    return x_lo + k % nx, y_lo + k // nx, best


def match_points(img_a: np.ndarray, img_b: np.ndarray, pts: np.ndarray,
                 search: int = SEARCH, mutual: bool = True
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """NCC search around each query point with an optional mutual check.

    Returns (p1, p2, scores); scores map the correlation from [-1, 1]
    onto [0, 1].  Query points on textureless patches are dropped.
    """
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    queries = np.asarray(pts, dtype=float).reshape(-1, 2)
    centers = np.rint(queries).astype(int)
    p1: list[tuple[float, float]] = []
    p2: list[tuple[float, float]] = []
    sc: list[float] = []
    for (qx, qy), (x, y) in zip(queries, centers):
        fwd_patch = _patch_vector(img_a, x, y)
        if fwd_patch is None:
            continue
        hit = _ncc_best(img_b, *fwd_patch, x, y, search)
        if hit is None:
            continue
        x2, y2, score = hit
        if mutual:
            back_patch = _patch_vector(img_b, x2, y2)
            if back_patch is None:
                continue
            back = _ncc_best(img_a, *back_patch, x2, y2, search)
            if back is None or math.hypot(back[0] - x, back[1] - y) > MUTUAL_TOL:
                continue
        p1.append((float(qx), float(qy)))
        p2.append((float(x2 + qx - x), float(y2 + qy - y)))
        sc.append(min(max((score + 1.0) / 2.0, 0.0), 1.0))
    if not p1:
        return np.empty((0, 2)), np.empty((0, 2)), np.empty(0)
    return np.asarray(p1), np.asarray(p2), np.asarray(sc)


def make_runner(protocol: str):
    """Build a ``runner(img_a, img_b) -> (p1, p2, scores)`` for one protocol."""

    def runner(img_a: np.ndarray, img_b: np.ndarray):
        if protocol == "sparse":
            pts = detect_keypoints(img_a)
        else:
            pts = grid_keypoints(img_a.shape[:2])
        return match_points(img_a, img_b, pts)

    return runner
