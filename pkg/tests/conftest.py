"""Shared synthetic scenes for the test suite.

The fixtures build small, fully deterministic stereo setups: an affine
camera pair over ramp terrain for pipeline tests and a low-altitude
perspective pair whose epipolar directions vary across the frame, which
makes all six bias parameters observable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

import satstereo as ss
from satstereo.frames import LocalFrame

LAT0, LON0 = 37.0, -105.0


@dataclass(frozen=True)
class Scene:
    m1: ss.RpcModel
    m2: ss.RpcModel
    img1: np.ndarray
    img2: np.ndarray
    terrain: ss.RampFlatTerrain
    texture: ss.SmoothTexture
    frame: LocalFrame
    width: int
    height: int
    gsd: float

    @property
    def dims(self) -> tuple[int, int]:
        return (self.width, self.height)


def build_affine_scene(width: int = 380, height: int = 380, gsd: float = 0.5,
                       zenith: float = 14.0, seed: int = 7) -> Scene:
    frame = LocalFrame(LAT0, LON0)
    m1 = ss.affine_rpc(LAT0, LON0, width=width, height=height, gsd=gsd,
                       view_azimuth_deg=90.0, view_zenith_deg=zenith,
                       h_off=20.0, h_scale=60.0)
    m2 = ss.affine_rpc(LAT0, LON0, width=width, height=height, gsd=gsd,
                       view_azimuth_deg=270.0, view_zenith_deg=zenith,
                       h_off=20.0, h_scale=60.0)
    terrain = ss.RampFlatTerrain(frame, base_height=10.0, ramp_start_x=-20.0,
                                 slope=0.12, max_height=38.0)
    extent = max(width, height) * gsd * 2.2
    texture = ss.SmoothTexture.create(frame, extent_m=extent, cell=1.0,
                                      seed=seed, blur_px=1.6)
    img1, img2 = ss.render_pair(m1, m2, terrain, texture, width, height)
    return Scene(m1, m2, img1, img2, terrain, texture, frame, width, height, gsd)


def build_perspective_pair(width: int = 800, height: int = 800, gsd: float = 0.5,
                           altitude: float = 4000.0):
    """Low-altitude pinhole pair: epipolar directions vary over the frame."""
    m1 = ss.perspective_rpc(LAT0, LON0, width=width, height=height, gsd=gsd,
                            view_azimuth_deg=70.0, view_zenith_deg=16.0,
                            h_off=20.0, h_scale=60.0, altitude=altitude)
    m2 = ss.perspective_rpc(LAT0, LON0, width=width, height=height, gsd=gsd,
                            view_azimuth_deg=255.0, view_zenith_deg=13.0,
                            h_off=20.0, h_scale=60.0, altitude=altitude)
    return m1, m2


@pytest.fixture(scope="session")
def affine_scene() -> Scene:
    return build_affine_scene()


@pytest.fixture(scope="session")
def perspective_pair():
    return build_perspective_pair()


def consistent_matches(m1, m2, n, seed, extent_m, dims, h_range=(5.0, 40.0)):
    """Projections of random ground points through both cameras."""
    rng = np.random.default_rng(seed)
    w, h = dims
    mlat, mlon = ss.meters_per_degree(LAT0)
    half_lat = extent_m / mlat
    half_lon = extent_m / mlon
    lat = LAT0 + rng.uniform(-half_lat, half_lat, n)
    lon = LON0 + rng.uniform(-half_lon, half_lon, n)
    hgt = rng.uniform(h_range[0], h_range[1], n)
    from satstereo.rpc import project_arrays

    s1, l1 = project_arrays(m1, lat, lon, hgt, warn_domain=False)
    s2, l2 = project_arrays(m2, lat, lon, hgt, warn_domain=False)
    inside = (
        (s1 >= 1) & (s1 <= w - 2) & (l1 >= 1) & (l1 <= h - 2)
        & (s2 >= 1) & (s2 <= w - 2) & (l2 >= 1) & (l2 <= h - 2)
    )
    p1 = np.column_stack([s1, l1])[inside]
    p2 = np.column_stack([s2, l2])[inside]
    return p1, p2
