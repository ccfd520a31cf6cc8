"""Exact-rational reference implementations used as test oracles."""

from fractions import Fraction

CELL_DEG = Fraction(1, 3)


def cell_oracle(lat_fx: int, lon_fx: int) -> tuple[int, int]:
    lat = Fraction(lat_fx, 100_000)
    lon = Fraction(lon_fx, 100_000)
    ci = int((90 - lat) // CELL_DEG)
    cj = int((lon + 180) // CELL_DEG)
    return min(ci, 539), cj % 1080


def centre(ci: int, cj: int) -> tuple[Fraction, Fraction]:
    """Cell centre as (lat, lon) in degrees, cj not wrapped."""
    return 90 - (ci + Fraction(1, 2)) * CELL_DEG, -180 + (cj + Fraction(1, 2)) * CELL_DEG


def label_oracle(ci: int, cj: int) -> int:
    return 3 * (ci % 3) + cj % 3 + 1


def nearest_oracle(lat_fx: int, lon_fx: int, label: int, radius: int = 4) -> tuple[int, int]:
    """Brute force over a (2*radius+1)^2 patch, squared Euclidean distance in degrees."""
    lat = Fraction(lat_fx, 100_000)
    lon = Fraction(lon_fx, 100_000)
    ci0 = int((90 - lat) // CELL_DEG)
    cj0 = int((lon + 180) // CELL_DEG)
    best = None
    for ci in range(ci0 - radius, ci0 + radius + 1):
        if not 0 <= ci < 540:
            continue
        for cj in range(cj0 - radius, cj0 + radius + 1):
            if label_oracle(ci, cj) != label:
                continue
            clat, clon = centre(ci, cj)
            key = ((clat - lat) ** 2 + (clon - lon) ** 2, (ci, cj % 1080))
            if best is None or key < best:
                best = key
    return best[1]


def chebyshev_to_centre(lat_fx: int, lon_fx: int, ci: int, cj: int) -> Fraction:
    clat, clon = centre(ci, cj)
    return max(abs(Fraction(lat_fx, 100_000) - clat), abs(Fraction(lon_fx, 100_000) - clon))
