"""Stereo pair selection: convergence-angle filtering and seeded sampling.

Candidate pairs are every unordered image pair of a tile whose RPC-derived
convergence angle falls inside the configured window.  Each candidate
carries a rank score combining seasonal and sun-illumination differences;
the score is reported as metadata while the final K pairs are drawn
uniformly from the filtered pool with a seeded generator.
"""

from __future__ import annotations

import datetime
import logging
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .rpc import GroundPoint, RpcModel, intersection_angle, load_rpc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageMeta:
    """Per-image acquisition metadata driving pair selection."""

    image_id: str
    acquisition_date: datetime.date
    sun_azimuth: float
    sun_elevation: float
    gsd: float
    rpc_path: str
    image_path: str | None = None

    def __post_init__(self):
        if not 0.0 < self.sun_elevation <= 90.0:
            raise ValueError(f"sun_elevation {self.sun_elevation} outside (0, 90]")
        if not 0.0 <= self.sun_azimuth < 360.0:
            raise ValueError(f"sun_azimuth {self.sun_azimuth} outside [0, 360)")
        if self.gsd <= 0:
            raise ValueError("gsd must be positive")

    @property
    def month(self) -> int:
        return self.acquisition_date.month


@dataclass(frozen=True)
class SelectionConfig:
    angle_min: float = 5.0
    angle_max: float = 35.0
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.angle_min < self.angle_max:
            raise ValueError("need 0 <= angle_min < angle_max")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class PairCandidate:
    id_a: str
    id_b: str
    intersection_angle: float
    sun_angle_diff: float
    month_diff: int
    rank_score: float

    def __post_init__(self):
        if not self.id_a < self.id_b:
            raise ValueError("pair ids must be in canonical (lexicographic) order")
        if not 0 <= self.month_diff <= 6:
            raise ValueError("month_diff outside [0, 6]")

    @property
    def pair_id(self) -> str:
        return f"{self.id_a}__{self.id_b}"


def month_diff(month_a: int, month_b: int) -> int:
    """Cyclic month-of-year difference, in [0, 6]."""
    for m in (month_a, month_b):
        if not (isinstance(m, (int, np.integer)) and 1 <= m <= 12):
            raise ValueError(f"month {m!r} outside 1..12")
    d = abs(month_a - month_b)
    return min(d, 12 - d)


def sun_vector(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector toward the sun (x east, y north, z up)."""
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return np.array(
        [math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)]
    )


def sun_angle_diff(a: ImageMeta, b: ImageMeta) -> float:
    """Angle in degrees between the two sun direction vectors, in [0, 180]."""
    cosang = float(
        np.clip(
            sun_vector(a.sun_azimuth, a.sun_elevation)
            @ sun_vector(b.sun_azimuth, b.sun_elevation),
            -1.0, 1.0,
        )
    )
    return math.degrees(math.acos(cosang))


def rank_score(month_d: int, sun_d: float) -> float:
    """Equal-weight normalized sum of seasonal and illumination differences."""
    return month_d / 6.0 + sun_d / 180.0


def _footprint_center(m1: RpcModel, m2: RpcModel) -> GroundPoint:
    return GroundPoint(
        (m1.lat_off + m2.lat_off) / 2.0,
        (m1.lon_off + m2.lon_off) / 2.0,
        (m1.h_off + m2.h_off) / 2.0,
    )


def enumerate_pairs(
    tile_images: list[ImageMeta], cfg: SelectionConfig, *, rpc_loader=load_rpc
) -> list[PairCandidate]:
    """Filter all unordered pairs by convergence angle, then sample K.

    Candidates are sorted by (rank_score descending, id_a, id_b) before the
    seeded uniform draw, so results never depend on input order.  A pool of
    at most K candidates is returned whole.
    """
    if len(tile_images) < 2:
        raise ValueError("need at least 2 images to form pairs")
    models: dict[str, RpcModel] = {}
    for meta in tile_images:
        try:
            models[meta.image_id] = rpc_loader(meta.rpc_path)
        except Exception as exc:
            log.warning("skipping image %s: unreadable RPC (%s)", meta.image_id, exc)

    pool: list[PairCandidate] = []
    usable = [m for m in tile_images if m.image_id in models]
    for a, b in combinations(sorted(usable, key=lambda m: m.image_id), 2):
        ma, mb = models[a.image_id], models[b.image_id]
        angle = intersection_angle(ma, mb, _footprint_center(ma, mb))
        if not cfg.angle_min <= angle <= cfg.angle_max:
            continue
        m_d = month_diff(a.month, b.month)
        s_d = sun_angle_diff(a, b)
        pool.append(
            PairCandidate(
                id_a=a.image_id, id_b=b.image_id, intersection_angle=angle,
                sun_angle_diff=s_d, month_diff=m_d, rank_score=rank_score(m_d, s_d),
            )
        )

    pool.sort(key=lambda c: (-c.rank_score, c.id_a, c.id_b))
    if len(pool) <= cfg.k:
        return pool
    rng = np.random.default_rng(cfg.seed)
    chosen = rng.choice(len(pool), size=cfg.k, replace=False)
    return [pool[i] for i in sorted(chosen)]
