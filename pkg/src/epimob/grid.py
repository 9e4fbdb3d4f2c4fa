"""Hexagonal spatial indexing.

Coordinates are assigned to hexagonal cells at resolutions 0..15, where
level 8 cells cover ~0.737 km^2.  Cell ids are opaque 64-bit integers
encoding (level, axial q, axial r) and serialize as lowercase hex strings.

The backend is pluggable.  The default (and, in this distribution, only)
backend is a flat axial hexagon tessellation over an equirectangular
projection anchored at a reference point.  It is dependency-free apart
from shapely (used for polygon validity and point-in-polygon tests) and
is exact for city-scale work near the reference latitude.  An H3-style
hierarchical backend can be registered under the same interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from shapely.geometry import Point, Polygon

from .errors import InvalidInputError

EARTH_RADIUS_M = 6371008.8

# Mean level-8 cell area; other levels scale by aperture 7.
AREA_L8_KM2 = 0.737327598
APERTURE = 7.0

MIN_LEVEL, MAX_LEVEL = 0, 15
DEFAULT_RESOLUTION = 8

# Reference point of the default tessellation (central Tokyo).
DEFAULT_ORIGIN = (35.6812, 139.7671)

_LEVEL_SHIFT = 52
_COORD_BITS = 26
_COORD_BIAS = 1 << (_COORD_BITS - 1)
_COORD_MASK = (1 << _COORD_BITS) - 1

CellId = int


def cell_to_hex(cell: CellId) -> str:
    """Serialize a cell id as a lowercase hex string (wire format)."""
    return format(cell, "x")


def hex_to_cell(s: str) -> CellId:
    try:
        return int(s, 16)
    except ValueError as exc:
        raise InvalidInputError(f"not a cell id: {s!r}") from exc


def cell_level(cell: CellId) -> int:
    return (cell >> _LEVEL_SHIFT) & 0xF


def _encode(level: int, q: int, r: int) -> CellId:
    if not (-_COORD_BIAS <= q < _COORD_BIAS and -_COORD_BIAS <= r < _COORD_BIAS):
        raise InvalidInputError("axial coordinate out of encodable range")
    return (level << _LEVEL_SHIFT) | ((q + _COORD_BIAS) << _COORD_BITS) | (r + _COORD_BIAS)


def _decode(cell: CellId) -> tuple[int, int, int]:
    level = (cell >> _LEVEL_SHIFT) & 0xF
    q = ((cell >> _COORD_BITS) & _COORD_MASK) - _COORD_BIAS
    r = (cell & _COORD_MASK) - _COORD_BIAS
    return level, q, r


def _check_latlon(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0):
        raise InvalidInputError(f"latitude out of range: {lat}")
    if not (-180.0 <= lon <= 180.0):
        raise InvalidInputError(f"longitude out of range: {lon}")


def _check_level(level: int) -> None:
    if not (MIN_LEVEL <= int(level) <= MAX_LEVEL):
        raise InvalidInputError(f"resolution level out of range: {level}")


@dataclass(frozen=True)
class GeoPolygon:
    """A closed, non-self-intersecting ring of (lat, lon) vertices."""

    ring: tuple[tuple[float, float], ...]

    def __init__(self, ring):
        pts = [tuple(map(float, p)) for p in ring]
        if len(pts) >= 2 and pts[0] == pts[-1]:
            pts = pts[:-1]
        if len(pts) < 3:
            raise InvalidInputError("polygon needs at least 3 distinct vertices")
        for lat, lon in pts:
            _check_latlon(lat, lon)
        object.__setattr__(self, "ring", tuple(pts))


class FlatHexBackend:
    """Flat axial hexagon tessellation on an equirectangular plane.

    Each resolution level is an independent tessellation (the hierarchy is
    not nested); parent_cell maps a cell to the coarser cell containing its
    center and is documented single-hop only.
    """

    name = "flathex"
    hierarchical = False

    def __init__(self, origin: tuple[float, float] = DEFAULT_ORIGIN):
        self.lat0, self.lon0 = origin
        self._coslat0 = math.cos(math.radians(self.lat0))

    # -- projection -------------------------------------------------

    def _project(self, lat: float, lon: float) -> tuple[float, float]:
        x = EARTH_RADIUS_M * math.radians(lon - self.lon0) * self._coslat0
        y = EARTH_RADIUS_M * math.radians(lat - self.lat0)
        return x, y

    def _unproject(self, x: float, y: float) -> tuple[float, float]:
        lat = self.lat0 + math.degrees(y / EARTH_RADIUS_M)
        lon = self.lon0 + math.degrees(x / (EARTH_RADIUS_M * self._coslat0))
        return lat, lon

    # -- cell geometry ----------------------------------------------

    @staticmethod
    @lru_cache(maxsize=None)
    def cell_size_m(level: int) -> float:
        """Circumradius (corner distance) of a hexagon at this level."""
        area_m2 = AREA_L8_KM2 * 1e6 * APERTURE ** (DEFAULT_RESOLUTION - level)
        return math.sqrt(2.0 * area_m2 / (3.0 * math.sqrt(3.0)))

    def cell_of(self, lat: float, lon: float, res: int = DEFAULT_RESOLUTION) -> CellId:
        _check_latlon(lat, lon)
        _check_level(res)
        x, y = self._project(lat, lon)
        s = self.cell_size_m(res)
        qf = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / s
        rf = (2.0 / 3.0 * y) / s
        q, r = _axial_round(qf, rf)
        return _encode(res, q, r)

    def cell_center(self, cell: CellId) -> tuple[float, float]:
        level, q, r = _decode(cell)
        s = self.cell_size_m(level)
        x = s * (math.sqrt(3.0) * q + math.sqrt(3.0) / 2.0 * r)
        y = s * 1.5 * r
        return self._unproject(x, y)

    def cell_boundary(self, cell: CellId) -> list[tuple[float, float]]:
        """Closed ring of (lat, lon) corners (GeoJSON-style, 7 points)."""
        level, q, r = _decode(cell)
        s = self.cell_size_m(level)
        cx = s * (math.sqrt(3.0) * q + math.sqrt(3.0) / 2.0 * r)
        cy = s * 1.5 * r
        ring = []
        for i in range(6):
            ang = math.radians(60.0 * i + 30.0)
            ring.append(self._unproject(cx + s * math.cos(ang), cy + s * math.sin(ang)))
        ring.append(ring[0])
        return ring

    def parent_cell(self, cell: CellId, coarser: int) -> CellId:
        _check_level(coarser)
        level = cell_level(cell)
        if coarser >= level:
            raise InvalidInputError(
                f"parent resolution {coarser} must be coarser than cell level {level}"
            )
        lat, lon = self.cell_center(cell)
        return self.cell_of(lat, lon, coarser)

    def cells_of(self, lats, lons, res: int = DEFAULT_RESOLUTION):
        """Vectorized cell_of over numpy arrays of coordinates."""
        import numpy as np

        _check_level(res)
        lats = np.asarray(lats, dtype=np.float64)
        lons = np.asarray(lons, dtype=np.float64)
        if lats.size and (
            lats.min() < -90 or lats.max() > 90 or lons.min() < -180 or lons.max() > 180
        ):
            raise InvalidInputError("coordinate out of range")
        x = EARTH_RADIUS_M * np.radians(lons - self.lon0) * self._coslat0
        y = EARTH_RADIUS_M * np.radians(lats - self.lat0)
        s = self.cell_size_m(res)
        qf = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / s
        rf = (2.0 / 3.0 * y) / s
        xf, zf = qf, rf
        yf = -xf - zf
        rx, ry, rz = np.round(xf), np.round(yf), np.round(zf)
        dx, dy, dz = np.abs(rx - xf), np.abs(ry - yf), np.abs(rz - zf)
        fix_x = (dx > dy) & (dx > dz)
        fix_z = ~fix_x & ~(dy > dz)
        rx = np.where(fix_x, -ry - rz, rx)
        rz = np.where(fix_z, -rx - ry, rz)
        q = rx.astype(np.int64)
        r = rz.astype(np.int64)
        if q.size and (
            q.min() < -_COORD_BIAS
            or q.max() >= _COORD_BIAS
            or r.min() < -_COORD_BIAS
            or r.max() >= _COORD_BIAS
        ):
            raise InvalidInputError("axial coordinate out of encodable range")
        return (
            (np.int64(res) << _LEVEL_SHIFT)
            | ((q + _COORD_BIAS) << _COORD_BITS)
            | (r + _COORD_BIAS)
        )

    def cells_covering(self, poly: GeoPolygon, res: int = DEFAULT_RESOLUTION) -> set[CellId]:
        _check_level(res)
        coords = [self._project(lat, lon) for lat, lon in poly.ring]
        shp = Polygon(coords)
        if shp.area == 0.0:
            return set()
        if not shp.is_valid:
            raise InvalidInputError("polygon ring is self-intersecting or otherwise invalid")
        s = self.cell_size_m(res)
        minx, miny, maxx, maxy = shp.bounds
        out: set[CellId] = set()
        r_lo = math.floor(2.0 * miny / (3.0 * s)) - 1
        r_hi = math.ceil(2.0 * maxy / (3.0 * s)) + 1
        for r in range(r_lo, r_hi + 1):
            y = s * 1.5 * r
            q_lo = math.floor((math.sqrt(3.0) / 3.0 * minx - y / 3.0) / s) - 1
            q_hi = math.ceil((math.sqrt(3.0) / 3.0 * maxx - y / 3.0) / s) + 1
            for q in range(q_lo, q_hi + 1):
                cx = s * (math.sqrt(3.0) * q + math.sqrt(3.0) / 2.0 * r)
                if shp.contains(Point(cx, y)):
                    out.add(_encode(res, q, r))
        if not out:
            c = shp.centroid
            lat, lon = self._unproject(c.x, c.y)
            out.add(self.cell_of(lat, lon, res))
        return out


def _axial_round(qf: float, rf: float) -> tuple[int, int]:
    # cube rounding: x=q, z=r, y=-x-z
    xf, zf = qf, rf
    yf = -xf - zf
    rx, ry, rz = round(xf), round(yf), round(zf)
    dx, dy, dz = abs(rx - xf), abs(ry - yf), abs(rz - zf)
    if dx > dy and dx > dz:
        rx = -ry - rz
    elif dy > dz:
        pass  # y is derived; nothing to fix for axial output
    else:
        rz = -rx - ry
    return int(rx), int(rz)


_BACKENDS: dict[str, type] = {"flathex": FlatHexBackend}

try:  # optional hierarchical backend, used when the h3 package is present
    import h3 as _h3  # noqa: F401

    class H3Backend:
        name = "h3"
        hierarchical = True

        def cell_of(self, lat, lon, res=DEFAULT_RESOLUTION):
            _check_latlon(lat, lon)
            _check_level(res)
            return int(_h3.latlng_to_cell(lat, lon, res), 16) if isinstance(
                _h3.latlng_to_cell(lat, lon, res), str
            ) else _h3.latlng_to_cell(lat, lon, res)

        def cell_center(self, cell):
            return tuple(_h3.cell_to_latlng(format(cell, "x")))

        def cell_boundary(self, cell):
            ring = [tuple(p) for p in _h3.cell_to_boundary(format(cell, "x"))]
            return ring + [ring[0]]

        def parent_cell(self, cell, coarser):
            lvl = _h3.get_resolution(format(cell, "x"))
            if coarser >= lvl:
                raise InvalidInputError("parent resolution must be coarser")
            return int(_h3.cell_to_parent(format(cell, "x"), coarser), 16)

        def cells_covering(self, poly, res=DEFAULT_RESOLUTION):
            shp = Polygon([(lon, lat) for lat, lon in poly.ring])
            if not shp.is_valid:
                raise InvalidInputError("polygon ring is self-intersecting")
            cells = _h3.polygon_to_cells(_h3.LatLngPoly(list(poly.ring)), res)
            return {int(c, 16) for c in cells}

    _BACKENDS["h3"] = H3Backend
except ImportError:
    pass


_default_backend = FlatHexBackend()


def get_backend(name: str | None = None):
    """Return a grid backend instance; default is the flat tessellation."""
    if name is None:
        return _default_backend
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise InvalidInputError(f"unknown grid backend: {name}") from None
