"""Command line: run and audit scenarios, render the attack matrix, run linkage trials.

Exit codes: 0 pass, 1 audit failure, 2 configuration error.
"""

import argparse
import sys
from pathlib import Path

from .adversary import emit_matrix, run_batch, run_linkage_experiment
from .scenario import (
    ConfigInvalid,
    TraceCorrupt,
    audit_trace,
    bundled_path,
    bundled_scenarios,
    exit_status,
    render_audit,
    run_scenario,
)
from .world import ScheduleViolation

OK, AUDIT_FAILED, CONFIG_ERROR = 0, 1, 2


def _resolve(workdir: Path, name: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else workdir / path


def _scenario_source(workdir: Path, name: str):
    path = _resolve(workdir, name)
    if path.exists() or name.endswith(".json") or name not in bundled_scenarios():
        return path
    return bundled_path(name)


def cmd_run(args) -> int:
    workdir = Path(args.workdir)
    source = _scenario_source(workdir, args.scenario)
    trace_out = _resolve(workdir, args.trace_out)
    trace_out.parent.mkdir(parents=True, exist_ok=True)
    try:
        result = run_scenario(source, seed=args.seed, trace_out=trace_out)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except (ConfigInvalid, ScheduleViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    sys.stdout.write(render_audit(result.audit))
    print(f"trace: {trace_out}")
    return result.exit_status


def cmd_audit(args) -> int:
    path = _resolve(Path(args.workdir), args.trace)
    try:
        audit = audit_trace(path.read_text())
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except TraceCorrupt as exc:
        print(f"trace corrupt: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    sys.stdout.write(render_audit(audit))
    return exit_status(audit)


def cmd_matrix(args) -> int:
    tsv, report = emit_matrix(run_batch(seed=args.seed, k=args.k))
    out = _resolve(Path(args.workdir), args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(tsv)
    out.with_suffix(".json").write_text(report)
    sys.stdout.write(tsv)
    return OK if '"all_match": true' in report else AUDIT_FAILED


def cmd_linkage(args) -> int:
    if args.n < 1 or args.trials < 1:
        print("config error: --n and --trials must be positive", file=sys.stderr)
        return CONFIG_ERROR
    result = run_linkage_experiment(args.n, args.trials, seed=args.seed, k=args.k)
    print(f"n={result.n}\ttrials={result.trials}\tsuccess_rate={result.success_rate:.4f}\t"
          f"baseline={1 / result.n:.4f}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offline-cbdc", description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default=".", help="directory relative paths are resolved against")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file (or a bundled scenario by name)")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, default=None, help="override the scenario's seed")
    run.add_argument("--trace-out", default="trace.jsonl")
    run.set_defaults(func=cmd_run)

    audit = sub.add_parser("audit", help="audit a finished trace")
    audit.add_argument("--trace", required=True)
    audit.set_defaults(func=cmd_audit)

    matrix = sub.add_parser("matrix", help="run the 28-cell attack batch")
    matrix.add_argument("--out", default="matrix.tsv")
    matrix.add_argument("--seed", type=int, default=0)
    matrix.add_argument("--k", type=int, default=16)
    matrix.set_defaults(func=cmd_matrix)

    linkage = sub.add_parser("linkage", help="withdraw/deposit linkage experiment")
    linkage.add_argument("--n", type=int, required=True)
    linkage.add_argument("--trials", type=int, required=True)
    linkage.add_argument("--seed", type=int, default=0)
    linkage.add_argument("--k", type=int, default=4)
    linkage.set_defaults(func=cmd_linkage)

    scenarios = sub.add_parser("scenarios", help="list bundled scenarios")
    scenarios.set_defaults(func=lambda args: print("\n".join(bundled_scenarios())) or OK)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
