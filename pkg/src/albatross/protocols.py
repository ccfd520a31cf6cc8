"""Client-side engine for the unified location protocol.

One sender checks in to one receiver per record.  Every record has the same
shape whatever the sender's granularity:

* ``ctr``      fresh counter for this direction
* ``eb_mine``  sender's protocol bit (1 = proximity test) under a pad
* ``eb_peer``  sender's belief about the receiver's protocol bit, padded
* ``cell``     sender's cell label, or a random label
* ``vec``      a pair of field elements

For a plain share ``vec = (pack(x) ^ k1, k2)``: the receiver sends any query
vector ``v1`` with ``v1.x0 != 0``, the relay returns ``<v1, vec>`` and the
receiver solves for ``x``.  For a proximity test ``vec = r * R(g, 1) + s``
and the receiver queries with ``R(1, -g')``; the relay's inner product then
equals ``<v1, s>`` exactly when ``g == g'``.
"""

from __future__ import annotations

import enum
import secrets
from dataclasses import dataclass
from typing import NamedTuple, Optional

from . import geo
from .crypto import Keystream, SharedKey, derive_keystream, initial_counter, mask64
from .errors import ConfigError, DecodeError, InvalidCoordinate, StaleCounter
from .field import (
    P,
    Vector2,
    field_inv,
    inner_product,
    rotate,
    sample_rotation,
    vec_add,
    vec_scale,
)
from .geo import GeoPoint, Sentinel

_rand = secrets.SystemRandom()


class Granularity(enum.IntEnum):
    AVAILABLE = 0
    CIRCLE = 1
    APPROX = 2
    NEARBY = 3
    INVISIBLE = 4
    FAKE = 5

    @classmethod
    def parse(cls, name: str) -> Granularity:
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown granularity {name!r}") from None


class Protocol(enum.Enum):
    PSP = "PSP"
    VPET = "VPET"


PSP_BIT = 0
VPET_BIT = 1


def protocol_bit(pref: Granularity) -> int:
    return VPET_BIT if pref == Granularity.NEARBY else PSP_BIT


def dispatch(pref_a: Granularity, pref_b: Granularity) -> Protocol:
    """Protocol used when a user with ``pref_a`` shares with one holding ``pref_b``.

    Invisible senders still run the masked plain share with a dummy location.
    """
    if pref_a == Granularity.NEARBY and pref_b == Granularity.NEARBY:
        return Protocol.VPET
    return Protocol.PSP


def direction_bit(sender: str, receiver: str) -> int:
    """Both ends of an edge agree on which direction is 0 by ordering user ids."""
    if sender == receiver:
        raise ValueError("an edge needs two distinct users")
    return 0 if sender < receiver else 1


@dataclass
class DirectionState:
    """Everything one user keeps about one contact."""

    me: str
    peer: str
    key: SharedKey
    my_pref: Granularity = Granularity.INVISIBLE
    my_fake: Optional[GeoPoint] = None
    last_sent_ctr: int = 0
    last_consumed_ctr: int = 0
    cached_peer_bit: Optional[int] = None
    cached_peer_location: Optional[GeoPoint] = None
    cached_peer_nearby: Optional[bool] = None

    @classmethod
    def new(cls, me: str, peer: str, key: SharedKey, **kw) -> DirectionState:
        kw.setdefault("last_sent_ctr", initial_counter())
        return cls(me, peer, key, **kw)

    @property
    def send_direction(self) -> int:
        return direction_bit(self.me, self.peer)

    @property
    def recv_direction(self) -> int:
        return direction_bit(self.peer, self.me)


class Header(NamedTuple):
    ctr: int
    eb_mine: int
    eb_peer: int
    cell: int


@dataclass(frozen=True)
class CheckinRecord:
    ctr: int
    eb_mine: int
    eb_peer: int
    cell: int
    vec: Vector2

    @property
    def header(self) -> Header:
        return Header(self.ctr, self.eb_mine, self.eb_peer, self.cell)


class Outcome(enum.Enum):
    LOCATION = "location"
    NEARBY_YES = "nearby"
    NEARBY_NO = "not-nearby"
    INVISIBLE = "invisible"
    STALE = "stale"


@dataclass(frozen=True)
class RetrievalResult:
    outcome: Outcome
    location: Optional[GeoPoint] = None

    def __str__(self) -> str:
        if self.outcome is Outcome.LOCATION:
            return f"location {self.location.degrees()}"
        return self.outcome.value


INVISIBLE = RetrievalResult(Outcome.INVISIBLE)
STALE = RetrievalResult(Outcome.STALE)
NEARBY_YES = RetrievalResult(Outcome.NEARBY_YES)
NEARBY_NO = RetrievalResult(Outcome.NEARBY_NO)

_SENTINEL_RESULTS = {
    Sentinel.INVISIBLE: INVISIBLE,
    Sentinel.NEARBY_YES: NEARBY_YES,
    Sentinel.NEARBY_NO: NEARBY_NO,
}


# --- vector building blocks -------------------------------------------------

def psp_vector(payload: GeoPoint, ks: Keystream) -> Vector2:
    return Vector2(mask64(geo.pack(payload), ks.k1), ks.k2)


def psp_decode(m: int, v1: Vector2, k1: int, k2: int) -> int:
    """Recover the unmasked 64-bit payload from ``m = v1.x0 * y + v1.x1 * k2``."""
    masked = (m - v1.x1 * k2) * field_inv(v1.x0) % P
    if masked >> 64:
        raise DecodeError("masked payload does not fit in 64 bits")
    return mask64(masked, k1)


def vpet_vector(gid: int, r: int, ks: Keystream) -> Vector2:
    """``r * R(t) * (gid, 1) + s``."""
    return vec_add(vec_scale(r, rotate(sample_rotation(ks.t), Vector2(gid, 1))), ks.s)


def vpet_vector_fast(gid: int, r: int, ks: Keystream) -> Vector2:
    """Same distribution as ``vpet_vector`` without the field inversion.

    ``R(t) = M(t) / (1 + t^2)`` with ``M = [[1 - t^2, -2t], [2t, 1 - t^2]]``,
    so ``r * R(t)`` equals ``r' * M(t)`` for ``r' = r / (1 + t^2)``.  A
    uniform non-zero ``r'`` corresponds to a uniform non-zero ``r``.
    """
    t = ks.t
    c = (1 - t * t) % P
    d = 2 * t % P
    return Vector2((r * (c * gid - d) + ks.s.x0) % P, (r * (d * gid + c) + ks.s.x1) % P)


def vpet_query(gid: int, t: int) -> Vector2:
    return rotate(sample_rotation(t), Vector2(1, -gid % P))


def vpet_match(m: int, expected: int) -> bool:
    """The single equality test that decides a proximity query."""
    return m == expected


def random_query() -> Vector2:
    """A query vector drawn from the same pipeline as a real proximity query."""
    while True:
        v1 = vpet_query(_rand.randrange(geo.GRID_ELEMENTS), _rand.randrange(P))
        if v1.x0:
            return v1


def _blinding_scalar() -> int:
    return 1 + _rand.randrange(P - 1)


# --- checkin ------------------------------------------------------------------

def _payload(state: DirectionState, location: GeoPoint) -> GeoPoint:
    pref = state.my_pref
    if pref in (Granularity.AVAILABLE, Granularity.CIRCLE):
        return location
    if pref == Granularity.APPROX:
        return geo.approximate(location)
    if pref == Granularity.FAKE:
        if state.my_fake is None:
            raise ConfigError(f"no fake location configured for {state.peer}")
        return state.my_fake
    return Sentinel.INVISIBLE.point


def _peer_is_nearby(state: DirectionState, location: GeoPoint) -> bool:
    if state.cached_peer_location is not None:
        return geo.is_nearby(state.cached_peer_location, location)
    return bool(state.cached_peer_nearby)


def unified_checkin(state: DirectionState, my_location: GeoPoint) -> CheckinRecord:
    if my_location.is_sentinel:
        raise InvalidCoordinate("checkin needs a real location")
    ctr = state.last_sent_ctr + 1
    ks = derive_keystream(state.key, state.send_direction, ctr)
    my_bit = protocol_bit(state.my_pref)

    if my_bit == VPET_BIT:
        belief = state.cached_peer_bit if state.cached_peer_bit is not None else PSP_BIT
        own_cell = geo.cell_of(my_location)
        cell = geo.cell_label(own_cell)
        if belief == VPET_BIT:
            vec = vpet_vector_fast(geo.grid_element_of(own_cell), _blinding_scalar(), ks)
        else:
            nearby = _peer_is_nearby(state, my_location)
            vec = psp_vector((Sentinel.NEARBY_YES if nearby else Sentinel.NEARBY_NO).point, ks)
    else:
        belief = _rand.getrandbits(1)
        cell = 1 + _rand.randrange(geo.LABELS)
        vec = psp_vector(_payload(state, my_location), ks)

    state.last_sent_ctr = ctr
    return CheckinRecord(ctr, my_bit ^ ks.padbits[0], belief ^ ks.padbits[1], cell, vec)


def batch_cache(state: DirectionState, n: int) -> list[CheckinRecord]:
    """Pre-generate ``n`` invisible checkins for the relay to serve while offline."""
    if n < 1:
        raise ValueError("cache batch needs at least one row")
    rows = []
    for _ in range(n):
        ctr = state.last_sent_ctr + 1
        ks = derive_keystream(state.key, state.send_direction, ctr)
        rows.append(CheckinRecord(
            ctr,
            PSP_BIT ^ ks.padbits[0],
            _rand.getrandbits(1) ^ ks.padbits[1],
            1 + _rand.randrange(geo.LABELS),
            psp_vector(Sentinel.INVISIBLE.point, ks),
        ))
        state.last_sent_ctr = ctr
    return rows


# --- retrieval ------------------------------------------------------------------

@dataclass(frozen=True)
class Query:
    """Phase-one outcome: the vector to send and what is needed to decode the reply.

    A stale query still carries a decoy vector so the relay sees an ordinary
    exchange; its reply is discarded.
    """

    ctr: int
    v1: Vector2
    keystream: Keystream
    peer_bit: int
    vpet: bool = False
    stale: bool = False


def retrieve_phase1(
    state: DirectionState, header: Header, my_location: Optional[GeoPoint] = None
) -> Query:
    if header.ctr <= state.last_consumed_ctr:
        raise StaleCounter(f"counter {header.ctr} already consumed")
    if not 1 <= header.cell <= geo.LABELS or header.eb_mine not in (0, 1) or header.eb_peer not in (0, 1):
        raise DecodeError("malformed header")
    ks = derive_keystream(state.key, state.recv_direction, header.ctr)
    peer_bit = header.eb_mine ^ ks.padbits[0]
    belief = header.eb_peer ^ ks.padbits[1]
    my_bit = protocol_bit(state.my_pref)

    if peer_bit == VPET_BIT and belief != my_bit:
        return Query(header.ctr, random_query(), ks, peer_bit, stale=True)
    if peer_bit == VPET_BIT and my_bit == VPET_BIT:
        if my_location is None:
            raise ConfigError("a proximity test needs the retriever's location")
        gid = geo.proximity_candidate(my_location, header.cell)
        return Query(header.ctr, vpet_query(gid, ks.t), ks, peer_bit, vpet=True)
    return Query(header.ctr, random_query(), ks, peer_bit)


def retrieve_phase2(state: DirectionState, query: Query, m: int) -> RetrievalResult:
    state.last_consumed_ctr = query.ctr
    state.cached_peer_bit = query.peer_bit
    if query.stale:
        return STALE

    if query.vpet:
        result = NEARBY_YES if vpet_match(m, inner_product(query.v1, query.keystream.s)) else NEARBY_NO
    else:
        x = psp_decode(m, query.v1, query.keystream.k1, query.keystream.k2)
        try:
            point = geo.unpack(x)
        except InvalidCoordinate as exc:
            raise DecodeError(f"decoded value is not a location: {exc}") from exc
        sentinel = point.sentinel
        result = _SENTINEL_RESULTS[sentinel] if sentinel else RetrievalResult(Outcome.LOCATION, point)

    state.cached_peer_location = result.location
    state.cached_peer_nearby = {
        Outcome.NEARBY_YES: True, Outcome.NEARBY_NO: False
    }.get(result.outcome)
    return result


def last_known(state: DirectionState) -> RetrievalResult:
    """What the retriever shows when the relay has nothing new for this contact."""
    if state.cached_peer_location is not None:
        return RetrievalResult(Outcome.LOCATION, state.cached_peer_location)
    if state.cached_peer_nearby is not None:
        return NEARBY_YES if state.cached_peer_nearby else NEARBY_NO
    return INVISIBLE
