"""Command-line client.

Exit codes: 0 success, 1 protocol error (the error code is printed to
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .client import Client, ClientStore, StoreLocked
from .errors import AlbatrossError, ConfigError, InvalidCoordinate, ProtocolError
from .geo import parse_degrees
from .protocols import Granularity
from .wire import Connection, server_address

EXIT_OK, EXIT_PROTOCOL, EXIT_USAGE = 0, 1, 2

_GRANULARITIES = [g.name.lower() for g in Granularity]


class UsageError(Exception):
    pass


def _location(text: str):
    try:
        return parse_degrees(text)
    except InvalidCoordinate as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="albatross", description="Privacy-preserving location sharing client.")
    ap.add_argument("--data-dir", default=os.environ.get("ALBATROSS_DATA", "~/.albatross"),
                    help="client store directory (env ALBATROSS_DATA)")
    ap.add_argument("--server", help="relay host:port (env ALBATROSS_SERVER)")
    ap.add_argument("--user", help="identity to use when the store holds several")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="create an identity on the relay")
    p.add_argument("name")
    p.add_argument("--password", help="account password (random if omitted)")

    p = sub.add_parser("add-contact", help="invite a contact; the edge goes live once both sides add")
    p.add_argument("peer")
    p.add_argument("--psk", help="inject a 32-hex pre-shared edge key instead of DH")

    p = sub.add_parser("set-pref", help="set the granularity shared with a contact")
    p.add_argument("peer")
    p.add_argument("granularity", choices=_GRANULARITIES)
    p.add_argument("--fake-loc", type=_location, metavar="LAT,LON")

    p = sub.add_parser("checkin", help="share the current location")
    loc = p.add_mutually_exclusive_group(required=True)
    loc.add_argument("--loc", type=_location, metavar="LAT,LON")
    loc.add_argument("--loc-file", help="file of LAT,LON lines; one checkin round per line")
    target = p.add_mutually_exclusive_group()
    target.add_argument("--to", metavar="PEER")
    target.add_argument("--all", action="store_true", help="all contacts (default)")

    p = sub.add_parser("retrieve", help="see one contact's location")
    p.add_argument("peer")
    p.add_argument("--loc", type=_location, metavar="LAT,LON", help="own position for proximity tests")

    p = sub.add_parser("retrieve-all", help="see every contact's location")
    p.add_argument("--loc", type=_location, metavar="LAT,LON")

    p = sub.add_parser("cache-fill", help="leave invisible checkins on the relay for offline periods")
    p.add_argument("peer", nargs="?")
    p.add_argument("--all", action="store_true")
    p.add_argument("--n", type=int, required=True)

    sub.add_parser("status", help="show identity and contacts")
    return ap


@contextmanager
def _session(args):
    store = ClientStore.load(Path(args.data_dir).expanduser(), args.user)
    store.lock()
    try:
        with Connection(server_address(args.server)) as conn:
            yield Client(store, conn)
    finally:
        # Counters may have advanced even on failure; never let them be reused.
        store.save()
        store.unlock()


def _report(errors: dict, out) -> int:
    code = EXIT_OK
    for peer, err in errors.items():
        if err:
            print(f"{peer}: {err}", file=out)
            code = EXIT_PROTOCOL
    return code


def _cmd_register(args) -> int:
    directory = Path(args.data_dir).expanduser()
    with Connection(server_address(args.server)) as conn:
        Client.register(directory, args.name, conn, args.password)
    print(f"registered {args.name}")
    return EXIT_OK


def _cmd_add_contact(args) -> int:
    with _session(args) as client:
        live = client.add_contact(args.peer, args.psk)
    print(f"{args.peer}: {'live' if live else 'pending'}")
    return EXIT_OK


def _cmd_set_pref(args) -> int:
    store = ClientStore.load(Path(args.data_dir).expanduser(), args.user)
    store.lock()
    try:
        Client(store, None).set_pref(args.peer, Granularity.parse(args.granularity), args.fake_loc)
        store.save()
    finally:
        store.unlock()
    return EXIT_OK


def _read_loc_file(path: str):
    with open(path) as fh:
        return [parse_degrees(line.strip()) for line in fh if line.strip() and not line.startswith("#")]


def _cmd_checkin(args) -> int:
    locations = [args.loc] if args.loc else _read_loc_file(args.loc_file)
    code = EXIT_OK
    with _session(args) as client:
        for loc in locations:
            code = max(code, _report(client.checkin(loc, args.to), sys.stderr))
    return code


def _cmd_retrieve(args) -> int:
    with _session(args) as client:
        print(client.retrieve(args.peer, args.loc))
    return EXIT_OK


def _cmd_retrieve_all(args) -> int:
    code = EXIT_OK
    with _session(args) as client:
        for peer, result in client.retrieve_all(args.loc).items():
            if isinstance(result, ProtocolError):
                print(f"{peer}: {result.code}", file=sys.stderr)
                code = EXIT_PROTOCOL
            else:
                print(f"{peer} {result}")
    return code


def _cmd_cache_fill(args) -> int:
    if bool(args.peer) == bool(args.all):
        raise UsageError("cache-fill needs exactly one of PEER or --all")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    with _session(args) as client:
        return _report(client.cache_fill(args.n, args.peer), sys.stderr)


def _cmd_status(args) -> int:
    store = ClientStore.load(Path(args.data_dir).expanduser(), args.user)
    print(f"user {store.user}")
    print(f"location {store.location.degrees() if store.location else '-'}")
    for peer, s in store.contacts.items():
        known = "-" if s.cached_peer_bit is None else ("nearby" if s.cached_peer_bit else "psp")
        print(f"contact {peer} pref={s.my_pref.name.lower()} sent={s.last_sent_ctr} "
              f"consumed={s.last_consumed_ctr} peer_protocol={known}")
    return EXIT_OK


_COMMANDS = {
    "register": _cmd_register,
    "add-contact": _cmd_add_contact,
    "set-pref": _cmd_set_pref,
    "checkin": _cmd_checkin,
    "retrieve": _cmd_retrieve,
    "retrieve-all": _cmd_retrieve_all,
    "cache-fill": _cmd_cache_fill,
    "status": _cmd_status,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"error: {exc.code}", file=sys.stderr)
        return EXIT_PROTOCOL
    except StoreLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ConfigError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AlbatrossError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    raise SystemExit(main())
