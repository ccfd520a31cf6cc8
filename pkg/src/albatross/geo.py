"""Fixed-point coordinates, sentinel locations and the square cell grid.

Coordinates are stored as integers at a scale of 10**5 per degree.  The
surface is cut into grid elements of ``GRID_WIDTH_DEG`` degrees, each split
into ``CELLS_PER_SIDE`` x ``CELLS_PER_SIDE`` square cells.  Rows count
southward from the north pole, columns eastward from longitude -180.

Cell labels repeat with period ``CELLS_PER_SIDE`` on both axes, so every
contiguous window of grid-element size holds each label exactly once.  That
is what lets a proximity decision run on a single equality test: the
observer picks the nearest cell carrying the peer's label, and the two sides
compare the grid elements that contain it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from typing import NamedTuple, Optional

from .errors import InvalidCoordinate, SentinelNotMappable

SCALE = 100_000
LAT_LIMIT = 90 * SCALE
LON_LIMIT = 180 * SCALE

GRID_WIDTH_DEG = 1
CELLS_PER_SIDE = 3

_INT32_MIN, _INT32_MAX = -(1 << 31), (1 << 31) - 1
_LOW32 = (1 << 32) - 1

# Cell geometry in "scaled" units: one fixed-point unit is CELLS_PER_SIDE
# scaled units, so one cell spans exactly GRID_WIDTH_DEG * SCALE of them.
CELL_SPAN = GRID_WIDTH_DEG * SCALE
ROWS = 180 * CELLS_PER_SIDE // GRID_WIDTH_DEG
COLS = 360 * CELLS_PER_SIDE // GRID_WIDTH_DEG
ELEMENTS_PER_ROW = 360 // GRID_WIDTH_DEG
GRID_ELEMENTS = (180 // GRID_WIDTH_DEG) * ELEMENTS_PER_ROW
LABELS = CELLS_PER_SIDE * CELLS_PER_SIDE

_SEARCH = 2  # 5x5 neighbourhood


class Sentinel(enum.Enum):
    """Dummy coordinates with longitudes past 180 degrees."""

    INVISIBLE = 18_100_000
    NEARBY_YES = 18_200_000
    NEARBY_NO = 18_300_000

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(0, self.value)


_SENTINEL_BY_LON = {s.value: s for s in Sentinel}


@dataclass(frozen=True)
class GeoPoint:
    lat_fx: int
    lon_fx: int

    def __post_init__(self):
        if not (isinstance(self.lat_fx, int) and isinstance(self.lon_fx, int)):
            raise InvalidCoordinate("fixed-point coordinates must be integers")
        if not -LAT_LIMIT <= self.lat_fx <= LAT_LIMIT:
            raise InvalidCoordinate(f"latitude out of range: {self.lat_fx}")
        if not -LON_LIMIT <= self.lon_fx <= LON_LIMIT and self.sentinel is None:
            raise InvalidCoordinate(f"longitude out of range: {self.lon_fx}")

    @property
    def sentinel(self) -> Optional[Sentinel]:
        if self.lat_fx != 0:
            return None
        return _SENTINEL_BY_LON.get(self.lon_fx)

    @property
    def is_sentinel(self) -> bool:
        return self.sentinel is not None

    def __str__(self) -> str:
        return f"{self.lat_fx},{self.lon_fx}"

    @classmethod
    def parse(cls, text: str) -> GeoPoint:
        """Inverse of ``str()``: ``"lat_fx,lon_fx"``."""
        try:
            lat, lon = text.split(",")
            return cls(int(lat), int(lon))
        except ValueError as exc:
            raise InvalidCoordinate(f"bad fixed-point location {text!r}") from exc

    def degrees(self) -> str:
        """Decimal-degree text with five fractional digits, e.g. ``37.40000,-122.10000``."""
        return f"{_fx_to_text(self.lat_fx)},{_fx_to_text(self.lon_fx)}"


def _fx_to_text(v: int) -> str:
    sign = "-" if v < 0 else ""
    whole, frac = divmod(abs(v), SCALE)
    return f"{sign}{whole}.{frac:05d}"


def _to_fx(value, limit: int, what: str) -> int:
    try:
        d = Decimal(str(value)).scaleb(5).quantize(Decimal(1), rounding=ROUND_HALF_EVEN)
    except (InvalidOperation, ValueError) as exc:
        raise InvalidCoordinate(f"bad {what}: {value!r}") from exc
    fx = int(d)
    if not -limit <= fx <= limit:
        raise InvalidCoordinate(f"{what} out of range: {value!r}")
    return fx


def encode_geo(lat, lon) -> GeoPoint:
    """Decimal degrees to fixed point.  Accepts floats, strings or Decimals."""
    return GeoPoint(_to_fx(lat, LAT_LIMIT, "latitude"), _to_fx(lon, LON_LIMIT, "longitude"))


def parse_degrees(text: str) -> GeoPoint:
    """Parse ``"lat,lon"`` in decimal degrees."""
    try:
        lat, lon = text.split(",")
    except ValueError as exc:
        raise InvalidCoordinate(f"expected lat,lon: {text!r}") from exc
    return encode_geo(lat.strip(), lon.strip())


def pack(point: GeoPoint) -> int:
    """Latitude in the high 32 bits, longitude in the low 32, two's complement."""
    return ((point.lat_fx & _LOW32) << 32) | (point.lon_fx & _LOW32)


def _signed32(v: int) -> int:
    return v - (1 << 32) if v & 0x8000_0000 else v


def unpack(bits: int) -> GeoPoint:
    if not 0 <= bits < 1 << 64:
        raise InvalidCoordinate("packed location must fit in 64 bits")
    return GeoPoint(_signed32(bits >> 32), _signed32(bits & _LOW32))


class CellCoord(NamedTuple):
    ci: int
    cj: int


def cell_of(point: GeoPoint) -> CellCoord:
    if point.is_sentinel:
        raise SentinelNotMappable(str(point))
    ci = (LAT_LIMIT - point.lat_fx) * CELLS_PER_SIDE // CELL_SPAN
    cj = (point.lon_fx + LON_LIMIT) * CELLS_PER_SIDE // CELL_SPAN
    return CellCoord(min(ci, ROWS - 1), cj % COLS)


def cell_label(cell: CellCoord) -> int:
    return CELLS_PER_SIDE * (cell.ci % CELLS_PER_SIDE) + cell.cj % CELLS_PER_SIDE + 1


def grid_element_of(cell: CellCoord) -> int:
    return (cell.ci // CELLS_PER_SIDE) * ELEMENTS_PER_ROW + cell.cj // CELLS_PER_SIDE


def nearest_cell_with_label(observer: GeoPoint, label: int) -> CellCoord:
    """Closest cell (by centre distance) carrying ``label``.

    Ties go to the lexicographically smallest ``(ci, cj)``.
    """
    if not 1 <= label <= LABELS:
        raise ValueError(f"cell label must be in [1, {LABELS}]")
    own = cell_of(observer)
    # Observer position in scaled units; cell (ci, cj) spans
    # [ci * CELL_SPAN, (ci + 1) * CELL_SPAN) on the row axis.
    y = (LAT_LIMIT - observer.lat_fx) * CELLS_PER_SIDE
    x = (observer.lon_fx + LON_LIMIT) * CELLS_PER_SIDE
    own_cj = x // CELL_SPAN  # unwrapped, so distances stay local at the antimeridian
    best = None
    for ci in range(own.ci - _SEARCH, own.ci + _SEARCH + 1):
        if not 0 <= ci < ROWS:
            continue
        for cj in range(own_cj - _SEARCH, own_cj + _SEARCH + 1):
            cell = CellCoord(ci, cj % COLS)
            if cell_label(cell) != label:
                continue
            dy = 2 * y - (2 * ci + 1) * CELL_SPAN
            dx = 2 * x - (2 * cj + 1) * CELL_SPAN
            key = (dy * dy + dx * dx, cell)
            if best is None or key < best:
                best = key
    return best[1]


def proximity_candidate(observer: GeoPoint, peer_label: int) -> int:
    return grid_element_of(nearest_cell_with_label(observer, peer_label))


def is_nearby(observer: GeoPoint, peer: GeoPoint) -> bool:
    """Plaintext version of the grid proximity decision."""
    peer_cell = cell_of(peer)
    return proximity_candidate(observer, cell_label(peer_cell)) == grid_element_of(peer_cell)


def approximate(point: GeoPoint) -> GeoPoint:
    """Truncate toward zero to two fractional digits of a degree."""
    if point.is_sentinel:
        raise SentinelNotMappable(str(point))
    step = SCALE // 100

    def trunc(v: int) -> int:
        return v - v % step if v >= 0 else -((-v) - (-v) % step)

    return GeoPoint(trunc(point.lat_fx), trunc(point.lon_fx))
