"""Command line entry point: ``treenet run|validate|report``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import monitor
from .runner import run_scenario
from .scenario import ScenarioError, load
from .sim import parse_trace_line


def _window(text: str) -> tuple[int, int]:
    a, sep, b = text.partition("..")
    if not sep:
        raise argparse.ArgumentTypeError("window must look like START..END (milliseconds)")
    try:
        start, end = int(a), int(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad window {text!r}") from exc
    if end <= start:
        raise argparse.ArgumentTypeError("window end must be after its start")
    return start, end


def _load(path: str):
    try:
        return load(path)
    except ScenarioError as exc:
        print(f"{path}: invalid scenario", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return None
    except OSError as exc:
        print(f"{path}: {exc.strerror}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    bundle = run_scenario(cfg, seed=args.seed, duration=args.duration)
    out = Path(args.out or f"out/{bundle.config.name}-seed{bundle.config.seed}")
    paths = bundle.write(out)
    sys.stdout.write(bundle.text())
    print(f"\nwrote {paths['trace']}, {paths['report']}, {paths['records']}")
    if bundle.mismatches:
        ids = ", ".join(str(v.inference_id) for v in bundle.mismatches)
        print(f"oracle mismatch for inference {ids}", file=sys.stderr)
    return bundle.exit_code


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    print(f"{args.config}: ok ({len(cfg.nodes)} nodes, root {cfg.root_id}, strategy {cfg.strategy.kind.value})")
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.trace, encoding="utf-8") as fh:
            records = [parse_trace_line(line) for line in fh if line.strip()]
    except OSError as exc:
        print(f"{args.trace}: {exc.strerror}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as exc:
        print(f"{args.trace}: not a trace file ({exc})", file=sys.stderr)
        return 2
    end = max((r.t for r in records), default=0) + 1
    window = args.window or (0, end)
    tp = monitor.throughput(records, window, args.observer)
    tm = monitor.timing([r for r in records if window[0] <= r.t < window[1]])
    topo = monitor.topology_log(records)
    if args.format == "records":
        items = [{"record": "topology", "t": t, "parents": s} for t, s in topo]
        sys.stdout.write(monitor.dump_records([*items, tp.record(), *tm.records()]))
    else:
        print("\n\n".join([monitor.topology_table(topo), tp.table(), tm.table()]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treenet", description="Simulate self-organizing tree networks.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its trace and reports")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--duration", type=int, help="override the run length (ms)")
    run.add_argument("--out", help="output directory (default out/<name>-seed<seed>)")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario file and list every problem")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="rebuild reports from a saved trace")
    rep.add_argument("trace")
    rep.add_argument("--window", type=_window, help="accounting window START..END in ms")
    rep.add_argument("--observer", help="node whose receive log is accounted (default: the one that logged it)")
    rep.add_argument("--format", choices=("text", "records"), default="text")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
