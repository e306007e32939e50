"""Command-line entry point: ``rcuguard {check,run,explore,annotate,corpus}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .checker import SiteCountError, annotate_diff, check_program, read_golden
from .corpus import run_all
from .explorer import ExploreBounds, ScheduleDivergence, explore, replay, sequential_schedule
from .lang import ParseError, Program, parse
from .machine import HeapError, list_heap, parse_heap, tree_heap

EXIT_OK = 0
EXIT_FOUND = 1
EXIT_USAGE = 2
EXIT_BOUNDS = 3


class UsageError(Exception):
    pass


def _color(text: str, code: str) -> str:
    if os.environ.get("RCUGUARD_COLOR", "1") == "0" or not sys.stdout.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _load(path: str) -> Program:
    try:
        return parse(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from e


def _heap(args, p: Program):
    if args.seed_heap:
        try:
            return parse_heap(Path(args.seed_heap).read_text())
        except OSError as e:
            raise UsageError(f"cannot read {args.seed_heap}: {e.strerror}") from e
    rcu = [f for f, k in p.field_types.items() if k == "rcu"]
    if len(rcu) == 1:
        return list_heap(args.heap, rcu[0])
    keys = [5, 3, 8, 7, 9, 1, 4, 6][: args.heap]
    return tree_heap(keys, rcu[0], rcu[1])


def _params(items: list[str] | None) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for item in items or []:
        try:
            lhs, value = item.split("=", 1)
            thread, name = lhs.split(".", 1)
            out.setdefault(thread, {})[name] = int(value)
        except ValueError as e:
            raise UsageError(f"--param expects THREAD.NAME=INT, got {item!r}") from e
    return out


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def cmd_check(args) -> int:
    p = _load(args.file)
    report = check_program(p, bound=args.mayalias_bound)
    if report.ok:
        _emit(args, report.to_json(), _color("ok", "32") + f": {args.file} type-checks")
        return EXIT_OK
    lines = [_color("rejected", "31") + f": {args.file}"]
    lines += [f"  {d}" for d in report.diagnostics]
    _emit(args, report.to_json(), "\n".join(lines))
    return EXIT_FOUND


def _gate(args, p: Program) -> int | None:
    if args.unsafe:
        return None
    report = check_program(p, bound=args.mayalias_bound)
    if report.ok:
        return None
    print(f"{args.file} does not type-check (use --unsafe to run it anyway):", file=sys.stderr)
    for d in report.diagnostics:
        print(f"  {d}", file=sys.stderr)
    return EXIT_FOUND


def cmd_explore(args) -> int:
    p = _load(args.file)
    stop = _gate(args, p)
    if stop is not None:
        return stop
    bounds = ExploreBounds(args.max_steps, args.max_heap_nodes, args.readers,
                           not args.no_dedup, args.sample)
    rep = explore(p, _heap(args, p), bounds, params=_params(args.param))
    lines = [f"states explored: {rep.states_explored}",
             f"schedules completed: {rep.schedules_completed}",
             f"exhausted: {'yes' if rep.exhausted else 'no (bounds hit)'}"]
    for f in rep.violations:
        lines.append(_color(f.reason, "31") + f" at step {f.step}: {f.detail}")
        lines.append("  schedule: " + " ".join(f.schedule))
    if not rep.violations:
        lines.append(_color("no violations", "32"))
    _emit(args, rep.to_json(), "\n".join(lines))
    if rep.violations:
        return EXIT_FOUND
    return EXIT_OK if rep.exhausted else EXIT_BOUNDS


def cmd_run(args) -> int:
    p = _load(args.file)
    stop = _gate(args, p)
    if stop is not None:
        return stop
    heap = _heap(args, p)
    params = _params(args.param)
    if args.schedule:
        try:
            raw = Path(args.schedule).read_text()
        except OSError as e:
            raise UsageError(f"cannot read {args.schedule}: {e.strerror}") from e
        schedule = raw.replace(",", " ").split()
    else:
        schedule = sequential_schedule(p, heap, reader_count=args.readers, params=params)
    try:
        res = replay(p, heap, schedule, reader_count=args.readers, params=params)
    except ScheduleDivergence as e:
        print(f"schedule diverges at {e}", file=sys.stderr)
        return EXIT_USAGE
    lines = [str(t) + f"  {t.instr}" for t in res.trace]
    lines.append(f"verdict: {res.verdict}")
    _emit(args, res.to_json(), "\n".join(lines))
    return EXIT_OK if res.verdict.safe else EXIT_FOUND


def cmd_annotate(args) -> int:
    p = _load(args.file)
    report = check_program(p, bound=args.mayalias_bound)
    golden = None
    if args.golden:
        try:
            golden = read_golden(Path(args.golden).read_text())
        except OSError as e:
            raise UsageError(f"cannot read {args.golden}: {e.strerror}") from e
    try:
        mismatches = annotate_diff(p, golden, bound=args.mayalias_bound)
    except SiteCountError as e:
        print(str(e), file=sys.stderr)
        return EXIT_FOUND
    lines = []
    for i, (site, thread, env) in enumerate(report.sites):
        shown = "<not reached>" if env is None else str(env)
        lines.append(f"[{i}] {thread} line {site.span.line}: {shown}")
    for mm in mismatches:
        lines.append(_color("mismatch", "31") + f" {mm}")
    lines.append(f"{len(mismatches)} mismatches")
    payload = {
        "sites": [{"index": i, "thread": t, "line": s.span.line, "assert": s.text,
                   "env": None if e is None else e.to_json()}
                  for i, (s, t, e) in enumerate(report.sites)],
        "mismatches": [mm.to_json() for mm in mismatches],
        "diagnostics": [d.to_json() for d in report.diagnostics],
    }
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK if not mismatches else EXIT_FOUND


def cmd_corpus(args) -> int:
    bounds = ExploreBounds(args.max_steps, args.max_heap_nodes, args.readers,
                           not args.no_dedup, args.sample)
    results = run_all(bounds, dynamic=not args.static_only, mayalias_bound=args.mayalias_bound)
    lines = []
    for r in results:
        mark = _color("PASS", "32") if r.ok else _color("FAIL", "31")
        kind = "pos" if r.case.positive else "neg"
        tail = f"; {r.dynamic}" if r.dynamic else ""
        lines.append(f"{mark} {kind} {r.case.name}: {r.static}{tail}")
    _emit(args, {"results": [r.to_json() for r in results]}, "\n".join(lines))
    return EXIT_OK if all(r.ok for r in results) else EXIT_FOUND


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcuguard",
                                 description="Check, run and explore RCU client programs.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print a JSON report")
    common.add_argument("--mayalias-bound", type=int, default=3, metavar="K",
                        help="index values tried before the symbolic alias test (default 3)")
    dyn = argparse.ArgumentParser(add_help=False)
    dyn.add_argument("--readers", type=int, default=2, metavar="N",
                     help="replicas per reader declaration (default 2)")
    dyn.add_argument("--max-steps", type=int, default=40)
    dyn.add_argument("--max-heap-nodes", type=int, default=5)
    dyn.add_argument("--sample", type=int, default=1, metavar="N",
                     help="check the axioms every N steps (default every step)")
    dyn.add_argument("--no-dedup", action="store_true")
    heap = argparse.ArgumentParser(add_help=False)
    heap.add_argument("--heap", type=int, default=3, metavar="N",
                      help="size of the generated initial list or tree (default 3)")
    heap.add_argument("--seed-heap", metavar="FILE", help="initial heap as (loc, field=value) lines")
    heap.add_argument("--param", action="append", metavar="THREAD.NAME=INT",
                      help="override a thread parameter")
    heap.add_argument("--unsafe", action="store_true",
                      help="run even if the program does not type-check")

    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", parents=[common], help="type-check a program")
    p.add_argument("file")
    p.set_defaults(fn=cmd_check)
    p = sub.add_parser("explore", parents=[common, dyn, heap], help="explore all interleavings")
    p.add_argument("file")
    p.set_defaults(fn=cmd_explore)
    p = sub.add_parser("run", parents=[common, dyn, heap], help="run one schedule")
    p.add_argument("file")
    p.add_argument("--schedule", metavar="FILE",
                   help="thread ids separated by spaces, commas or newlines; default runs threads in order")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("annotate", parents=[common], help="show environments at assertion sites")
    p.add_argument("file")
    p.add_argument("--golden", metavar="FILE", help="compare against these assertions instead")
    p.set_defaults(fn=cmd_annotate)
    p = sub.add_parser("corpus", parents=[common, dyn], help="run the bundled suites")
    p.add_argument("--static-only", action="store_true", help="skip exploration")
    p.set_defaults(fn=cmd_corpus)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.fn(args)
    except ParseError as e:
        print(f"{args.file}:{e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, HeapError, ValueError) as e:
        print(f"rcuguard: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
