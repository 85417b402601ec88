"""Points, tract polygons and great-circle distance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0088


class InvalidCoordinate(ValueError):
    pass


class DegeneratePolygon(ValueError):
    pass


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidCoordinate(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidCoordinate(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise InvalidCoordinate(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class GeoPolygon:
    """A single closed ring; the closing vertex is implicit."""

    ring: tuple[GeoPoint, ...]

    def __post_init__(self):
        ring = tuple(self.ring)
        if len(ring) >= 2 and ring[0] == ring[-1]:
            raise ValueError("ring must not repeat its first vertex at the end")
        if len(ring) < 3:
            raise ValueError(f"ring needs at least 3 vertices, got {len(ring)}")
        object.__setattr__(self, "ring", ring)

    @classmethod
    def from_coords(cls, coords):
        """Build from ``[(lat, lon), ...]``, dropping an explicit closing vertex."""
        pts = [GeoPoint(lat, lon) for lat, lon in coords]
        if len(pts) > 3 and pts[0] == pts[-1]:
            pts = pts[:-1]
        return cls(tuple(pts))


def distance_km(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine great-circle distance on a sphere of radius 6371.0088 km."""
    la, lb = math.radians(a.lat), math.radians(b.lat)
    s1 = math.sin((lb - la) / 2.0)
    s2 = math.sin((math.radians(b.lon) - math.radians(a.lon)) / 2.0)
    h = s1 * s1 + math.cos(la) * math.cos(lb) * s2 * s2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def polygon_centroid(p: GeoPolygon) -> GeoPoint:
    """Area-weighted centroid of the ring.

    Vertices are projected equirectangularly about the ring's mean latitude,
    the planar shoelace centroid is taken there, and the result is mapped back
    to degrees.
    """
    lat = np.array([q.lat for q in p.ring])
    lon = np.array([q.lon for q in p.ring])
    scale = math.cos(math.radians(lat.mean()))
    x = lon * scale
    y = lat
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y1 - x1 * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-12:
        raise DegeneratePolygon(f"projected area {abs(area):.3g} is below 1e-12")
    cx = ((x + x1) * cross).sum() / (6.0 * area)
    cy = ((y + y1) * cross).sum() / (6.0 * area)
    return GeoPoint(cy, cx / scale)


def point_in_polygon(pt: GeoPoint, p: GeoPolygon) -> bool:
    """Even-odd ray casting in the (lon, lat) plane."""
    inside = False
    ring = p.ring
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        if (a.lat > pt.lat) != (b.lat > pt.lat):
            x = a.lon + (pt.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
            if pt.lon < x:
                inside = not inside
    return inside
