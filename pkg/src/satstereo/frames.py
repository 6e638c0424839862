"""Local metric frames for small ground footprints.

A tile of a few hundred meters is mapped to an east/north Cartesian frame
with an equirectangular approximation anchored at a reference point, using
the WGS84 radii of curvature at the anchor latitude.  Over the ~600 m
extents handled here the approximation error is far below the pixel-level
tolerances of the pipeline, so no full geodesy dependency is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563


def meters_per_degree(lat: float) -> tuple[float, float]:
    """(meters per degree latitude, meters per degree longitude) at ``lat``."""
    e2 = WGS84_F * (2.0 - WGS84_F)
    s = math.sin(math.radians(lat))
    den = 1.0 - e2 * s * s
    m_merid = WGS84_A * (1.0 - e2) / den ** 1.5
    m_prime = WGS84_A / math.sqrt(den)
    rad = math.pi / 180.0
    return m_merid * rad, m_prime * math.cos(math.radians(lat)) * rad


@dataclass(frozen=True)
class LocalFrame:
    """East/north meters relative to an anchor (lat0, lon0) -> (x0, y0)."""

    lat0: float
    lon0: float
    x0: float = 0.0
    y0: float = 0.0

    @property
    def _scales(self) -> tuple[float, float]:
        return meters_per_degree(self.lat0)

    def to_xy(self, lat, lon):
        """Ground (lat, lon) degrees to local (x east, y north) meters."""
        m_lat, m_lon = self._scales
        return (lon - self.lon0) * m_lon + self.x0, (lat - self.lat0) * m_lat + self.y0

    def to_latlon(self, x, y):
        """Local (x east, y north) meters back to (lat, lon) degrees."""
        m_lat, m_lon = self._scales
        return (y - self.y0) / m_lat + self.lat0, (x - self.x0) / m_lon + self.lon0
