"""Handcrafted multi-scale feature detector and descriptor.

Difference-of-Gaussians blob detection over an octave pyramid with
sub-pixel quadratic refinement, orientation assignment from gradient
histograms, and a 4x4x8 gradient-orientation descriptor normalized to
unit length.  Everything is deterministic: identical images give
identical keypoint lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rpc import ImagePoint


@dataclass(frozen=True)
class FeatureConfig:
    n_octaves: int = 4
    scales_per_octave: int = 3
    sigma0: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    max_keypoints: int = 4000
    border: int = 5


@dataclass(frozen=True)
class Keypoint:
    position: ImagePoint
    scale: float
    orientation: float
    response: float
    descriptor: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        d = np.asarray(self.descriptor, dtype=np.float32)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-5:
            raise ValueError("descriptor must be unit length")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "descriptor", d)


def _gaussian_pyramid(base: np.ndarray, cfg: FeatureConfig):
    """Per octave: scales_per_octave + 3 levels at sigma0 * k^i."""
    k = 2.0 ** (1.0 / cfg.scales_per_octave)
    n_levels = cfg.scales_per_octave + 3
    first_blur = math.sqrt(max(cfg.sigma0**2 - cfg.assumed_blur**2, 0.01))
    octaves = []
    current = ndimage.gaussian_filter(base, first_blur, mode="nearest")
    for _ in range(cfg.n_octaves):
        levels = [current]
        for i in range(1, n_levels):
            prev_sigma = cfg.sigma0 * k ** (i - 1)
            inc = prev_sigma * math.sqrt(k * k - 1.0)
            levels.append(ndimage.gaussian_filter(levels[-1], inc, mode="nearest"))
        octaves.append(np.stack(levels))
        next_base = levels[cfg.scales_per_octave][::2, ::2]
        if min(next_base.shape) < 16:
            break
        current = next_base
    return octaves


def _local_extrema(dog: np.ndarray, threshold: float, border: int) -> np.ndarray:
    """Indices (level, row, col) of 26-neighborhood extrema in a DoG stack."""
    footprint = np.ones((3, 3, 3), dtype=bool)
    is_max = (dog == ndimage.maximum_filter(dog, footprint=footprint, mode="nearest"))
    is_min = (dog == ndimage.minimum_filter(dog, footprint=footprint, mode="nearest"))
    cand = (is_max | is_min) & (np.abs(dog) > 0.8 * threshold)
    cand[0] = cand[-1] = False
    cand[:, :border, :] = cand[:, -border:, :] = False
    cand[:, :, :border] = cand[:, :, -border:] = False
    return np.argwhere(cand)


def _refine_extremum(dog: np.ndarray, lvl: int, r: int, c: int, cfg: FeatureConfig):
    """Quadratic 3D sub-pixel refinement; returns (lvl_f, r_f, c_f, value) or None."""
    n_lvl, h, w = dog.shape
    for _ in range(5):
        d = dog
        grad = 0.5 * np.array([
            d[lvl + 1, r, c] - d[lvl - 1, r, c],
            d[lvl, r + 1, c] - d[lvl, r - 1, c],
            d[lvl, r, c + 1] - d[lvl, r, c - 1],
        ])
        v = d[lvl, r, c]
        hss = d[lvl + 1, r, c] + d[lvl - 1, r, c] - 2 * v
        hrr = d[lvl, r + 1, c] + d[lvl, r - 1, c] - 2 * v
        hcc = d[lvl, r, c + 1] + d[lvl, r, c - 1] - 2 * v
        hsr = 0.25 * (d[lvl + 1, r + 1, c] - d[lvl + 1, r - 1, c]
                      - d[lvl - 1, r + 1, c] + d[lvl - 1, r - 1, c])
        hsc = 0.25 * (d[lvl + 1, r, c + 1] - d[lvl + 1, r, c - 1]
                      - d[lvl - 1, r, c + 1] + d[lvl - 1, r, c - 1])
        hrc = 0.25 * (d[lvl, r + 1, c + 1] - d[lvl, r + 1, c - 1]
                      - d[lvl, r - 1, c + 1] + d[lvl, r - 1, c - 1])
        hess = np.array([[hss, hsr, hsc], [hsr, hrr, hrc], [hsc, hrc, hcc]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = v + 0.5 * float(grad @ offset)
            if abs(value) < cfg.contrast_threshold:
                return None
            r_ = cfg.edge_ratio
            tr, det = hrr + hcc, hrr * hcc - hrc * hrc
            if det <= 0 or tr * tr * r_ >= (r_ + 1) ** 2 * det:
                return None
            return lvl + offset[0], r + offset[1], c + offset[2], value
        lvl = int(np.clip(lvl + round(offset[0]), 1, n_lvl - 2))
        r = int(np.clip(r + round(offset[1]), cfg.border, h - 1 - cfg.border))
        c = int(np.clip(c + round(offset[2]), cfg.border, w - 1 - cfg.border))
    return None


def _smooth_circular(hist: np.ndarray, passes: int = 2) -> np.ndarray:
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    for _ in range(passes):
        hist = sum(kernel[i] * np.roll(hist, i - 2) for i in range(5))
    return hist


def _orientations(gmag, gang, r, c, sigma_oct):
    """Dominant gradient orientations around (r, c); peaks >= 80% of max."""
    h, w = gmag.shape
    radius = int(round(3.0 * 1.5 * sigma_oct))
    r0, r1 = max(r - radius, 0), min(r + radius + 1, h)
    c0, c1 = max(c - radius, 0), min(c + radius + 1, w)
    mag = gmag[r0:r1, c0:c1]
    ang = gang[r0:r1, c0:c1]
    yy, xx = np.mgrid[r0 - r:r1 - r, c0 - c:c1 - c]
    weight = np.exp(-(xx**2 + yy**2) / (2 * (1.5 * sigma_oct) ** 2))
    bins = np.floor((ang % (2 * np.pi)) / (2 * np.pi) * 36).astype(int) % 36
    hist = np.bincount(bins.ravel(), weights=(mag * weight).ravel(), minlength=36)
    hist = _smooth_circular(hist)
    peak = hist.max()
    if peak <= 0:
        return []
    out = []
    for i in range(36):
        l, rgt = hist[(i - 1) % 36], hist[(i + 1) % 36]
        if hist[i] >= 0.8 * peak and hist[i] > l and hist[i] > rgt:
            denom = l - 2 * hist[i] + rgt
            delta = 0.5 * (l - rgt) / denom if denom < 0 else 0.0
            out.append(((i + 0.5 + delta) / 36.0) * 2 * np.pi)
    return out


def _descriptor(gmag, gang, r_f, c_f, sigma_oct, theta):
    """4x4 spatial x 8 orientation histogram, trilinear binning, unit norm."""
    d_bins, o_bins = 4, 8
    hist_width = 3.0 * sigma_oct
    radius = int(round(hist_width * math.sqrt(2) * (d_bins + 1) * 0.5))
    h, w = gmag.shape
    r_i, c_i = int(round(r_f)), int(round(c_f))
    r0, r1 = max(r_i - radius, 0), min(r_i + radius + 1, h)
    c0, c1 = max(c_i - radius, 0), min(c_i + radius + 1, w)
    if r1 <= r0 or c1 <= c0:
        return None
    yy, xx = np.mgrid[r0:r1, c0:c1]
    dy = yy - r_f
    dx = xx - c_f
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    x_rot = (dx * cos_t + dy * sin_t) / hist_width
    y_rot = (-dx * sin_t + dy * cos_t) / hist_width
    rbin = y_rot + d_bins / 2 - 0.5
    cbin = x_rot + d_bins / 2 - 0.5
    keep = (rbin > -1) & (rbin < d_bins) & (cbin > -1) & (cbin < d_bins)
    if not np.any(keep):
        return None
    rbin, cbin = rbin[keep], cbin[keep]
    mag = gmag[r0:r1, c0:c1][keep]
    ang = (gang[r0:r1, c0:c1][keep] - theta) % (2 * np.pi)
    obin = ang / (2 * np.pi) * o_bins
    weight = mag * np.exp(-(x_rot[keep] ** 2 + y_rot[keep] ** 2) / (2 * (d_bins / 2) ** 2))

    hist = np.zeros((d_bins + 2, d_bins + 2, o_bins))
    r_lo = np.floor(rbin).astype(int)
    c_lo = np.floor(cbin).astype(int)
    o_lo = np.floor(obin).astype(int)
    fr, fc, fo = rbin - r_lo, cbin - c_lo, obin - o_lo
    for dr in (0, 1):
        wr = weight * (fr if dr else 1 - fr)
        for dc in (0, 1):
            wc = wr * (fc if dc else 1 - fc)
            for do in (0, 1):
                wo = wc * (fo if do else 1 - fo)
                np.add.at(
                    hist,
                    (r_lo + dr + 1, c_lo + dc + 1, (o_lo + do) % o_bins),
                    wo,
                )
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    vec = np.minimum(vec / norm, 0.2)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    return (vec / norm).astype(np.float32)


def detect_and_describe(image: np.ndarray, cfg: FeatureConfig = FeatureConfig()):
    """Detect DoG keypoints and compute descriptors on a grayscale image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a single-channel 2D image")
    if min(img.shape) < 64:
        raise ValueError("image must be at least 64x64")
    if not np.all(np.isfinite(img)):
        raise ValueError("image intensities must be finite")
    lo, hi = float(img.min()), float(img.max())
    if hi - lo <= 0:
        return []
    img = (img - lo) / (hi - lo)

    pyramids = _gaussian_pyramid(img, cfg)
    k = 2.0 ** (1.0 / cfg.scales_per_octave)
    raw = []
    for octave, gauss in enumerate(pyramids):
        dog = gauss[1:] - gauss[:-1]
        grads = {}
        for lvl, r, c in _local_extrema(dog, cfg.contrast_threshold, cfg.border):
            refined = _refine_extremum(dog, int(lvl), int(r), int(c), cfg)
            if refined is None:
                continue
            lvl_f, r_f, c_f, value = refined
            level_idx = int(np.clip(round(lvl_f), 1, gauss.shape[0] - 2))
            if level_idx not in grads:
                gy, gx = np.gradient(gauss[level_idx])
                grads[level_idx] = (np.hypot(gx, gy), np.arctan2(gy, gx))
            gmag, gang = grads[level_idx]
            sigma_oct = cfg.sigma0 * k**lvl_f
            for theta in _orientations(gmag, gang, int(round(r_f)), int(round(c_f)), sigma_oct):
                desc = _descriptor(gmag, gang, r_f, c_f, sigma_oct, theta)
                if desc is None:
                    continue
                scale = 2.0**octave
                raw.append(
                    Keypoint(
                        position=ImagePoint(c_f * scale, r_f * scale),
                        scale=sigma_oct * scale,
                        orientation=theta,
                        response=abs(value),
                        descriptor=desc,
                    )
                )
    raw.sort(
        key=lambda kp: (-kp.response, kp.position.line, kp.position.sample, kp.scale,
                        kp.orientation)
    )
    return raw[: cfg.max_keypoints]
