import itertools
import json
import random

import pytest
from hypothesis import given, strategies as st

from albatross import geo, protocols
from albatross.crypto import Keystream, derive_keystream
from albatross.errors import ConfigError, DecodeError, StaleCounter
from albatross.field import IDENTITY, P, Vector2, field_inv, inner_product, rotate, sample_rotation
from albatross.protocols import (
    Granularity as G, Header, Outcome, Protocol, batch_cache, dispatch, protocol_bit,
    psp_decode, retrieve_phase1, retrieve_phase2, unified_checkin, vpet_match, vpet_query,
)
from albatross.wire import record_to_wire
from engine import FAKE_POINT, deliver, disclosed, edge, exchange, expected_view

HOME = geo.encode_geo(37.4, -122.1)
NEAR = geo.encode_geo(37.45, -122.05)
FAR = geo.encode_geo(40.0, -100.0)


def test_protocol_bits():
    assert protocol_bit(G.NEARBY) == 1
    for g in G:
        if g != G.NEARBY:
            assert protocol_bit(g) == 0


def test_granularity_codes():
    assert [int(g) for g in (G.AVAILABLE, G.CIRCLE, G.APPROX, G.NEARBY, G.INVISIBLE, G.FAKE)] == list(range(6))
    assert G.parse("Nearby") is G.NEARBY
    with pytest.raises(ValueError):
        G.parse("everyone")


def test_dispatch_chart():
    for a, b in itertools.product(G, G):
        want = Protocol.VPET if a == b == G.NEARBY else Protocol.PSP
        assert dispatch(a, b) is want
    assert dispatch(G.FAKE, G.AVAILABLE) is Protocol.PSP
    assert dispatch(G.NEARBY, G.INVISIBLE) is Protocol.PSP


def test_psp_toy_example():
    k1, k2, x = 6, 7, 10
    y = x ^ k1
    assert y == 12
    v1 = Vector2(2, 3)
    m = inner_product(v1, Vector2(y, k2))
    assert m == 45
    assert (45 - 21) * field_inv(2) % P == 12
    assert psp_decode(m, v1, k1, k2) == 10


def test_psp_decode_rejects_wide_value():
    with pytest.raises(DecodeError):
        psp_decode(2**64, Vector2(1, 0), 0, 0)


def test_vpet_toy_example():
    # Identity rotation, g_A = 5, g_B = 6, r = 1, s = 0.
    assert sample_rotation(0) == IDENTITY
    v1 = vpet_query(5, 0)
    b = Vector2(6, 1)
    m = inner_product(v1, b)
    assert m == 1
    assert not vpet_match(m, inner_product(v1, Vector2(0, 0)))


def test_vpet_equal_gids_vanish():
    rng = random.Random(5)
    for _ in range(200):
        g, t, r = rng.randrange(64_800), rng.randrange(P), rng.randrange(1, P)
        ks = Keystream(t, Vector2(rng.randrange(P), rng.randrange(P)), 0, 0, (0, 0))
        m = inner_product(vpet_query(g, t), protocols.vpet_vector(g, r, ks))
        assert m == inner_product(vpet_query(g, t), ks.s)


@pytest.mark.parametrize("pref", list(G))
def test_schema_identical_across_granularities(pref):
    ref_a, _ = edge()
    ref = record_to_wire(unified_checkin(ref_a, HOME))
    a, _ = edge()
    a.my_pref = pref
    a.my_fake = FAKE_POINT
    a.last_sent_ctr = ref_a.last_sent_ctr - 1
    body = record_to_wire(unified_checkin(a, HOME))
    assert list(body) == list(ref)
    assert [len(json.dumps(body[k])) for k in body] == [len(json.dumps(ref[k])) for k in ref]


def test_cached_rows_share_live_schema():
    a, b = edge()
    a.my_pref = G.AVAILABLE
    live = record_to_wire(unified_checkin(a, HOME))
    for row in batch_cache(a, 3):
        body = record_to_wire(row)
        assert list(body) == list(live)
        assert [len(json.dumps(body[k])) for k in body] == [len(json.dumps(live[k])) for k in live]


def test_invisible_checkin_decodes_to_invisible():
    a, b = edge()
    rec = unified_checkin(a, HOME)  # default preference is invisible
    ks = derive_keystream(a.key, a.send_direction, rec.ctr)
    assert geo.unpack(rec.vec.x0 ^ ks.k1) == geo.Sentinel.INVISIBLE.point
    assert rec.vec.x1 == ks.k2
    assert deliver(rec, b, FAR).outcome is Outcome.INVISIBLE


def test_fake_needs_location():
    a, _ = edge()
    a.my_pref = G.FAKE
    with pytest.raises(ConfigError):
        unified_checkin(a, HOME)


def test_checkin_counter_increments():
    a, _ = edge()
    start = a.last_sent_ctr
    ctrs = [unified_checkin(a, HOME).ctr for _ in range(5)]
    assert ctrs == list(range(start + 1, start + 6))


def test_batch_cache_counters_and_content():
    a, b = edge()
    a.my_pref = G.AVAILABLE
    a.last_sent_ctr = 41
    rows = batch_cache(a, 10)
    assert [r.ctr for r in rows] == list(range(42, 52))
    assert a.last_sent_ctr == 51
    for r in rows:
        ks = derive_keystream(a.key, a.send_direction, r.ctr)
        assert r.eb_mine ^ ks.padbits[0] == protocols.PSP_BIT
        assert deliver(r, b, FAR).outcome is Outcome.INVISIBLE
    with pytest.raises(ValueError):
        batch_cache(a, 0)


def test_nearby_both_sides_same_cell():
    a, b = edge()
    a.my_pref = b.my_pref = G.NEARBY
    b.cached_peer_bit = protocols.VPET_BIT
    a.cached_peer_bit = protocols.VPET_BIT
    assert str(exchange(b, a, HOME, HOME)) == "nearby"
    assert str(exchange(b, a, HOME, FAR)) == "not-nearby"


def test_nearby_sender_psp_receiver_uses_cached_location():
    a, b = edge()
    a.my_pref = G.APPROX
    b.my_pref = G.NEARBY
    assert str(exchange(a, b, NEAR, HOME)) == f"location {geo.approximate(NEAR).degrees()}"
    assert b.cached_peer_bit == protocols.PSP_BIT
    rec = unified_checkin(b, HOME)
    ks = derive_keystream(b.key, b.send_direction, rec.ctr)
    want = geo.Sentinel.NEARBY_YES if geo.is_nearby(geo.approximate(NEAR), HOME) else geo.Sentinel.NEARBY_NO
    assert geo.unpack(rec.vec.x0 ^ ks.k1) == want.point
    assert want is geo.Sentinel.NEARBY_YES
    assert str(deliver(rec, a, NEAR)) == "nearby"


def test_nearby_sender_unknown_peer_sends_not_nearby():
    a, b = edge()
    b.my_pref = G.NEARBY
    assert str(exchange(b, a, HOME, HOME)) == "not-nearby"


def test_stale_abort_after_preference_flip():
    a, b = edge()
    a.my_pref = b.my_pref = G.NEARBY
    b.cached_peer_bit = protocols.VPET_BIT
    rec = unified_checkin(b, HOME)
    a.my_pref = G.AVAILABLE
    query = retrieve_phase1(a, rec.header, HOME)
    assert query.stale and query.v1.x0 != 0
    result = retrieve_phase2(a, query, inner_product(query.v1, rec.vec))
    assert result.outcome is Outcome.STALE
    assert a.last_consumed_ctr == rec.ctr
    assert a.cached_peer_bit == protocols.VPET_BIT


def test_peer_psp_never_stale():
    a, b = edge()
    b.my_pref = G.AVAILABLE
    for pref in G:
        a.my_pref = pref
        rec = unified_checkin(b, HOME)
        q = retrieve_phase1(a, rec.header, HOME)
        assert not q.stale and not q.vpet


def test_consumed_counter_refused():
    a, b = edge()
    rec = unified_checkin(b, HOME)
    deliver(rec, a, HOME)
    with pytest.raises(StaleCounter):
        retrieve_phase1(a, rec.header, HOME)


def test_malformed_header():
    a, _ = edge()
    with pytest.raises(DecodeError):
        retrieve_phase1(a, Header(a.last_consumed_ctr + 1, 0, 0, 10), HOME)


def test_proximity_query_needs_location():
    a, b = edge()
    a.my_pref = b.my_pref = G.NEARBY
    b.cached_peer_bit = protocols.VPET_BIT
    with pytest.raises(ConfigError):
        retrieve_phase1(a, unified_checkin(b, HOME).header, None)


def test_vpet_query_vector_uses_candidate():
    a, b = edge()
    a.my_pref = b.my_pref = G.NEARBY
    b.cached_peer_bit = protocols.VPET_BIT
    rec = unified_checkin(b, HOME)
    q = retrieve_phase1(a, rec.header, NEAR)
    ks = derive_keystream(a.key, a.recv_direction, rec.ctr)
    gid = geo.proximity_candidate(NEAR, rec.cell)
    assert q.vpet
    assert q.v1 == rotate(sample_rotation(ks.t), Vector2(1, -gid % P))


def test_mismatched_case_raises_decode_error():
    a, b = edge()
    a.my_pref = G.AVAILABLE
    rec = unified_checkin(a, HOME)
    q = retrieve_phase1(b, rec.header, FAR)
    # A garbage reply cannot silently decode to a location.
    garbage = (inner_product(q.v1, rec.vec) + 2**100) % P
    with pytest.raises(DecodeError):
        retrieve_phase2(b, q, garbage)


def test_last_known_fallbacks():
    a, b = edge()
    assert str(protocols.last_known(a)) == "invisible"
    b.my_pref = G.AVAILABLE
    exchange(b, a, HOME, FAR)
    assert str(protocols.last_known(a)) == "location 37.40000,-122.10000"


@pytest.mark.parametrize("sender_pref,receiver_pref", list(itertools.product(G, G)))
def test_chart_against_plaintext_oracle(sender_pref, receiver_pref):
    rng = random.Random(int(sender_pref) * 6 + int(receiver_pref))
    for sender_loc, receiver_loc in [(HOME, NEAR), (HOME, FAR),
                                     (geo.encode_geo(rng.uniform(-60, 60), rng.uniform(-170, 170)), HOME)]:
        r, s = edge("rita", "sam")
        s.my_pref, s.my_fake = sender_pref, FAKE_POINT
        r.my_pref, r.my_fake = receiver_pref, FAKE_POINT
        # Round one teaches each side the other's protocol bit and disclosure.
        rec_s, rec_r = unified_checkin(s, sender_loc), unified_checkin(r, receiver_loc)
        deliver(rec_r, s, sender_loc)
        deliver(rec_s, r, receiver_loc)
        got = exchange(s, r, sender_loc, receiver_loc)
        assert str(got) == expected_view(sender_pref, receiver_pref, sender_loc, receiver_loc)


def test_oracle_helper_disclosure():
    assert disclosed(G.INVISIBLE, HOME) is None
    assert disclosed(G.APPROX, geo.GeoPoint(3_741_234, -12_216_789)) == geo.GeoPoint(3_741_000, -12_216_000)


@given(st.integers(0, 64_799), st.integers(1, P - 1), st.integers(0, P - 1),
       st.integers(0, P - 1), st.integers(0, P - 1))
def test_fast_vpet_vector_matches_definition(gid, r, t, s0, s1):
    ks = Keystream(t, Vector2(s0, s1), 0, 0, (0, 0))
    scaled = r * field_inv((1 + t * t) % P) % P
    assert protocols.vpet_vector_fast(gid, scaled, ks) == protocols.vpet_vector(gid, r, ks)
