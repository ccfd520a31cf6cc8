"""``albatross-harness`` command line."""

from __future__ import annotations

import argparse
import sys

from .analysis import assert_indistinguishable, load_transcript, server_view
from .bench import benchmark, fit_scaling
from .scenario import Scenario, read_timings, run_scenario, write_timings


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="albatross-harness")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="play a scenario file against a fresh relay")
    p.add_argument("scenario")
    p.add_argument("--out", help="work directory for stores, transcript and logs")

    p = sub.add_parser("compare", help="structural comparison of two transcripts")
    p.add_argument("first")
    p.add_argument("second")

    p = sub.add_parser("view", help="print the operator's view of a transcript")
    p.add_argument("transcript")

    p = sub.add_parser("bench", help="time batch retrieval")
    p.add_argument("--n", default="100,250,500,1000", help="comma-separated contact counts")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--server", help="existing relay host:port (default: spawn one)")
    p.add_argument("--csv", default="timings.csv")

    p = sub.add_parser("fit", help="linear fit over a timing CSV")
    p.add_argument("csv")

    args = ap.parse_args(argv)
    if args.command == "run":
        result = run_scenario(Scenario.load(args.scenario), args.out)
        for user, rows in result.results.items():
            for row in rows:
                print(f"round {row['round']} {user} <- {row['peer']}: {row['result']}")
        print(f"work directory: {result.workdir}")
    elif args.command == "compare":
        verdict = assert_indistinguishable(load_transcript(args.first), load_transcript(args.second))
        print(verdict)
        return 0 if verdict else 1
    elif args.command == "view":
        print(server_view(load_transcript(args.transcript)).table())
    elif args.command == "bench":
        rows = benchmark([int(n) for n in args.n.split(",")], args.reps, args.server)
        write_timings(rows, args.csv)
        fit = fit_scaling(rows)
        for n in sorted({r[0] for r in rows}):
            times = [r[2] for r in rows if r[0] == n]
            print(f"n={n:5d} mean={sum(times) / len(times):.4f}s")
        print(fit)
    elif args.command == "fit":
        print(fit_scaling(read_timings(args.csv)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
