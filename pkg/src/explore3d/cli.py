"""Command-line entry point: ``explore run|replay|bench|gen-world``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import sim
from .world import GENERATORS


def _cmd_run(args) -> int:
    scenario = sim.Scenario.load(args.scenario, seed=args.seed)
    result = sim.run(scenario, verify=args.verify, record_graph=bool(args.graph))
    if args.metrics:
        result.metrics.write(args.metrics)
    else:
        sys.stdout.write(result.metrics.to_jsonl())
    if args.timings:
        result.metrics.write_timings(args.timings)
    if args.record:
        sim.write_journal(result.journal, args.record)
    if args.graph:
        Path(args.graph).write_text("".join(json.dumps(g, sort_keys=True) + "\n" for g in result.graph_log))
    s = result.metrics.summary
    print(f"{s['status']}: coverage {s['coverage']:.3f}, {s['epochs']} epochs, "
          f"distance {s['distance']:.1f} m, sim time {s['sim_time']:.1f} s, "
          f"{s['safety_violations']} safety violations", file=sys.stderr)
    for v in result.violations:
        print(v, file=sys.stderr)
    if result.violations:
        return sim.EXIT_ERROR
    return result.exit_code


def _cmd_replay(args) -> int:
    entries = sim.read_journal(args.journal)
    verdict = sim.replay(entries, mutations=args.mutations, seed=args.seed)
    print(verdict)
    return sim.EXIT_OK if verdict.ok else sim.EXIT_ERROR


def _cmd_bench(args) -> int:
    detectors = [d.strip() for d in args.detectors.split(",") if d.strip()]
    scenario = sim.Scenario.load(args.scenario, seed=args.seed)
    if args.max_epochs is not None:
        scenario.max_epochs = args.max_epochs
    result = sim.run(scenario)
    bench = sim.bench(result.journal, detectors)
    if args.csv:
        Path(args.csv).write_text(bench.to_csv())
    print(f"{'detector':<10} {'avg_us':>12} {'std_us':>12} {'avg_scanned':>12} {'iterations':>10}")
    for name, row in bench.summary().items():
        print(f"{name:<10} {row['avg_us']:>12.1f} {row['std_us']:>12.1f} "
              f"{row['avg_scanned']:>12.1f} {row['iterations']:>10d}")
    for m in bench.mismatches:
        print(m, file=sys.stderr)
    return sim.EXIT_ERROR if bench.mismatches else sim.EXIT_OK


def _cmd_gen_world(args) -> int:
    kw = {"resolution": args.resolution}
    if args.size:
        kw["size"] = tuple(args.size)
    world = GENERATORS[args.kind](args.seed, **kw)
    world.save(args.output)
    return sim.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="explore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one exploration scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--record", metavar="JOURNAL", help="write a replayable journal")
    p.add_argument("--metrics", metavar="JSONL", help="metrics stream (default: stdout)")
    p.add_argument("--timings", metavar="JSONL", help="per-epoch wall-clock timings")
    p.add_argument("--graph", metavar="JSONL", help="roadmap nodes and edges after every epoch")
    p.add_argument("--verify", action="store_true", help="cross-check every epoch against the oracles")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("replay", help="re-verify a recorded journal")
    p.add_argument("journal")
    p.add_argument("--mutations", type=int, default=0,
                   help="random voxel-state changes to inject inside recorded FOVs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("bench", help="compare frontier detectors on one exploration trace")
    p.add_argument("scenario")
    p.add_argument("--detectors", default=",".join(sim.DETECTORS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--csv", metavar="FILE", help="per-iteration rows")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gen-world", help="write a procedural world as a scene file")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--resolution", type=float, default=0.2)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gen_world)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return sim.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
