"""Arithmetic in GF(p), p = 2**127 - 1, plus the 2-D vector algebra built on it.

Field elements are plain ``int`` values kept in ``[0, P)``.  Every function
here returns a reduced value, so callers never have to reduce themselves.

Rotations use the rational parametrization of the unit circle::

    c = (1 - t^2) / (1 + t^2),   d = 2t / (1 + t^2)

which gives ``c^2 + d^2 == 1`` exactly.  ``1 + t^2`` never vanishes because
-1 is a quadratic non-residue when ``P % 4 == 3``.
"""

from __future__ import annotations

from typing import NamedTuple

from .errors import DivisionByZero

P = (1 << 127) - 1
HEX_DIGITS = 32

FieldElement = int


def field_add(a: int, b: int) -> int:
    return (a + b) % P


def field_sub(a: int, b: int) -> int:
    return (a - b) % P


def field_neg(a: int) -> int:
    return -a % P


def field_mul(a: int, b: int) -> int:
    return a * b % P


def field_inv(a: int) -> int:
    a %= P
    if a == 0:
        raise DivisionByZero("inverse of zero in GF(2^127 - 1)")
    return pow(a, -1, P)


def to_hex(a: int) -> str:
    """Wire form: 32 lowercase hex digits, big-endian, zero padded."""
    if not 0 <= a < P:
        raise ValueError(f"not a reduced field element: {a}")
    return format(a, "032x")


def from_hex(text: str) -> int:
    if len(text) != HEX_DIGITS or text != text.lower():
        raise ValueError(f"field element must be {HEX_DIGITS} lowercase hex digits")
    value = int(text, 16)
    if value >= P:
        raise ValueError("field element out of range")
    return value


class Vector2(NamedTuple):
    x0: int
    x1: int

    def to_wire(self) -> list[str]:
        return [to_hex(self.x0), to_hex(self.x1)]

    @classmethod
    def from_wire(cls, pair) -> Vector2:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ValueError("vector must be a pair of field elements")
        return cls(from_hex(pair[0]), from_hex(pair[1]))


class RotationMatrix(NamedTuple):
    """The matrix [[c, -d], [d, c]] with c^2 + d^2 == 1."""

    c: int
    d: int


IDENTITY = RotationMatrix(1, 0)


def sample_rotation(t: int) -> RotationMatrix:
    t %= P
    t2 = t * t % P
    inv = field_inv(1 + t2)
    return RotationMatrix((1 - t2) * inv % P, 2 * t * inv % P)


def rotate(rot: RotationMatrix, v: Vector2) -> Vector2:
    c, d = rot
    return Vector2((c * v.x0 - d * v.x1) % P, (d * v.x0 + c * v.x1) % P)


def inner_product(u: Vector2, v: Vector2) -> int:
    return (u.x0 * v.x0 + u.x1 * v.x1) % P


def vec_add(u: Vector2, v: Vector2) -> Vector2:
    return Vector2((u.x0 + v.x0) % P, (u.x1 + v.x1) % P)


def vec_scale(k: int, v: Vector2) -> Vector2:
    return Vector2(k * v.x0 % P, k * v.x1 % P)
