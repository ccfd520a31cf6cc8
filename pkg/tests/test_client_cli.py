import pytest

from albatross import cli, geo
from albatross.client import CORE_BYTES, Client, ClientStore, StoreLocked
from albatross.errors import ConfigError
from albatross.protocols import Granularity
from albatross.wire import Connection, parse_address


class Cli:
    """Runs the CLI in-process, one data directory per user."""

    def __init__(self, relay, tmp_path, capsys):
        self.server = relay.address
        self.root = tmp_path
        self.capsys = capsys

    def __call__(self, user, *args):
        self.capsys.readouterr()
        code = cli.main(["--data-dir", str(self.root / user), "--server", self.server, *args])
        out, err = self.capsys.readouterr()
        return code, out.strip(), err.strip()


@pytest.fixture
def run(relay, tmp_path, capsys):
    return Cli(relay, tmp_path, capsys)


def pair(run):
    assert run("alice", "register", "alice")[0] == 0
    assert run("bob", "register", "bob")[0] == 0
    assert run("alice", "add-contact", "bob")[1] == "bob: pending"
    assert run("bob", "add-contact", "alice")[1] == "alice: live"


def test_available_location_end_to_end(run):
    pair(run)
    assert run("alice", "set-pref", "bob", "available")[0] == 0
    assert run("alice", "checkin", "--loc", "37.4,-122.1") == (0, "", "")
    assert run("bob", "retrieve", "alice", "--loc", "40,-100") == (0, "location 37.40000,-122.10000", "")


def test_default_is_invisible_and_empty_fetch(run):
    pair(run)
    assert run("bob", "retrieve", "alice")[1] == "invisible"
    run("alice", "checkin", "--loc", "1,1")
    assert run("bob", "retrieve", "alice", "--loc", "1,1")[1] == "invisible"


def test_retrieve_all_lines(run):
    pair(run)
    run("carol", "register", "carol")
    run("carol", "add-contact", "bob")
    run("bob", "add-contact", "carol")
    run("alice", "set-pref", "bob", "approx")
    run("alice", "checkin", "--loc", "37.41234,-122.16789")
    code, out, _ = run("bob", "retrieve-all", "--loc", "0,0")
    assert code == 0
    assert sorted(out.splitlines()) == ["alice location 37.41000,-122.16000", "carol invisible"]


def test_nearby_needs_two_rounds(run):
    pair(run)
    run("alice", "set-pref", "bob", "nearby")
    run("bob", "set-pref", "alice", "nearby")
    for _ in range(2):
        run("alice", "checkin", "--loc", "37.4,-122.1")
        run("bob", "checkin", "--loc", "37.41,-122.11")
        a = run("alice", "retrieve", "bob", "--loc", "37.4,-122.1")[1]
        b = run("bob", "retrieve", "alice", "--loc", "37.41,-122.11")[1]
    assert (a, b) == ("nearby", "nearby")


def test_loc_file_and_fake(run, tmp_path):
    pair(run)
    run("alice", "set-pref", "bob", "fake", "--fake-loc", "48.85,2.35")
    trace = tmp_path / "trace.txt"
    trace.write_text("# morning\n37.4,-122.1\n37.5,-122.2\n")
    assert run("alice", "checkin", "--loc-file", str(trace), "--to", "bob")[0] == 0
    assert run("bob", "retrieve", "alice")[1] == "location 48.85000,2.35000"


def test_offline_cache_reads_invisible(run, relay, clock):
    pair(run)
    run("alice", "set-pref", "bob", "available")
    run("alice", "checkin", "--loc", "1,2")
    assert run("bob", "retrieve", "alice")[1] == "location 1.00000,2.00000"
    assert run("alice", "cache-fill", "bob", "--n", "2")[0] == 0
    clock.advance(60)
    assert run("bob", "retrieve", "alice")[1] == "invisible"
    assert run("bob", "retrieve", "alice")[1] == "invisible"


def test_status_output(run):
    pair(run)
    run("alice", "set-pref", "bob", "circle")
    code, out, _ = run("alice", "status")
    assert code == 0
    assert out.splitlines()[0] == "user alice"
    assert "contact bob pref=circle" in out


def test_exit_codes(run):
    assert run("alice", "frobnicate")[0] == 2
    assert run("alice", "checkin", "--loc", "100,0")[0] == 2
    assert run("nobody", "status")[0] == 2
    pair(run)
    assert run("alice", "register", "alice")[:2] == (1, "")
    assert "DUP_USER" in run("alice", "register", "alice")[2]
    assert run("alice", "retrieve", "carol")[0] == 2
    assert run("alice", "cache-fill", "--n", "3")[0] == 2
    assert run("alice", "set-pref", "bob", "fake")[0] == 2


def test_pending_edge_checkin_fails(run):
    run("alice", "register", "alice")
    run("bob", "register", "bob")
    run("alice", "add-contact", "bob")
    code, _, err = run("alice", "checkin", "--loc", "1,1")
    assert code == 1 and "NO_EDGE" in err


def test_lock_rejects_concurrent_use(run, tmp_path):
    run("alice", "register", "alice")
    store = ClientStore.load(tmp_path / "alice")
    store.lock()
    try:
        assert run("alice", "checkin", "--loc", "1,1")[0] == 1
        other = ClientStore.load(tmp_path / "alice")
        with pytest.raises(StoreLocked):
            other.lock()
    finally:
        store.unlock()


def test_store_round_trip(relay, tmp_path):
    with Connection(parse_address(relay.address)) as conn:
        a = Client.register(tmp_path / "a", "ann", conn)
        b = Client.register(tmp_path / "b", "ben", conn)
        a.add_contact("ben")
        b.add_contact("ann")
        a.set_pref("ben", Granularity.FAKE, geo.encode_geo(1, 2))
        a.checkin(geo.encode_geo(3, 4))
        b.retrieve("ann")
        for c in (a, b):
            c.store.save()
            again = ClientStore.load(c.store.directory)
            assert again.user == c.store.user and again.token == c.store.token
            assert again.identity.public_hex() == c.store.identity.public_hex()
            assert again.location == c.store.location
            assert again.contacts == c.store.contacts
            assert again.secret_core() == c.store.secret_core()


def test_edge_keys_agree_via_dh(relay, tmp_path):
    with Connection(parse_address(relay.address)) as conn:
        a = Client.register(tmp_path / "a", "ann", conn)
        b = Client.register(tmp_path / "b", "ben", conn)
        a.add_contact("ben")
        b.add_contact("ann")
        assert a.store.contacts["ben"].key == b.store.contacts["ann"].key


def test_psk_injection(run, tmp_path):
    pair_psk = "00112233445566778899aabbccddeeff"
    run("alice", "register", "alice")
    run("bob", "register", "bob")
    run("alice", "add-contact", "bob", "--psk", pair_psk)
    run("bob", "add-contact", "alice", "--psk", pair_psk)
    assert ClientStore.load(tmp_path / "alice").contacts["bob"].key.hex() == pair_psk
    run("alice", "set-pref", "bob", "available")
    run("alice", "checkin", "--loc", "5,5")
    assert run("bob", "retrieve", "alice")[1] == "location 5.00000,5.00000"


@pytest.mark.parametrize("n", [0, 1, 3])
def test_core_file_size(relay, tmp_path, n):
    with Connection(parse_address(relay.address)) as conn:
        me = Client.register(tmp_path / "me", "me", conn)
        for i in range(n):
            Client.register(tmp_path / f"p{i}", f"p{i}", conn)
            me.add_contact(f"p{i}")
        me.store.save()
    assert me.store.keys_path.stat().st_size == CORE_BYTES * n == 17 * n


def test_corrupt_core_detected(relay, tmp_path):
    with Connection(parse_address(relay.address)) as conn:
        me = Client.register(tmp_path / "me", "me", conn)
        Client.register(tmp_path / "p", "pal", conn)
        me.add_contact("pal")
        me.store.save()
    me.store.keys_path.write_bytes(b"\0" * 16)
    with pytest.raises(ConfigError):
        ClientStore.load(tmp_path / "me")
