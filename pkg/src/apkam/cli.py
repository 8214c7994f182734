"""Command line entry point: `apkam <command> [--config PATH] [--out DIR] ...`."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

GROUPS = {
    "small-twist": ("avg", "split", "chart"),
    "oscillator": ("simulate", "poincare", "expansion", "bounded", "resonant"),
}
SINGLE = ("solve-homological", "kam-step", "kam-run", "dioph-scan")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--out", type=Path, default=Path("runs"), help="artifact directory (default: runs/<scenario>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP threads")
    p.add_argument("--no-figures", action="store_true", help="write tables only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apkam", description="Reversible KAM and forced oscillator experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SINGLE:
        _common(sub.add_parser(name))
    for group, kinds in GROUPS.items():
        gp = sub.add_parser(group).add_subparsers(dest="kind", required=True)
        for k in kinds:
            _common(gp.add_parser(k))
    golden = sub.add_parser("golden").add_subparsers(dest="kind", required=True)
    for k in ("record", "check"):
        p = golden.add_parser(k)
        _common(p)
        p.add_argument("--golden", type=Path, required=True, help="golden trace JSON")
    return parser


def scenario_of(args) -> str:
    if args.command in SINGLE:
        return args.command
    if args.command == "golden":
        return "kam-run"
    return f"{args.command}-{args.kind}"


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _print_trace(tr, out: Path) -> None:
    print(f"scenario\t{tr.scenario}")
    print(f"verdict\t{tr.verdict}")
    for k, v in sorted(tr.metrics.items()):
        if isinstance(v, (int, float, str, bool)):
            print(f"{k}\t{v}")
    for n in tr.notes:
        print(f"note\t{n}")
    print(f"artifacts\t{out}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    _set_threads(args.threads)
    # heavy imports after the thread settings
    from .config import load_config
    from .errors import ConfigInvalid, SchemaMismatch
    from .runner import compare_golden, golden_record, run

    scenario = scenario_of(args)
    overrides = {"seed": args.seed} if args.seed is not None else {}
    try:
        cfg = load_config(args.config, scenario, overrides)
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    out = args.out / scenario if args.out == Path("runs") else args.out
    tr = run(cfg, out, figures=False if args.no_figures else None)
    _print_trace(tr, out)
    if args.command == "golden":
        if args.kind == "record":
            if tr.verdict != "certified":
                print("error: refusing to record a golden from an uncertified run", file=sys.stderr)
                return 1
            args.golden.parent.mkdir(parents=True, exist_ok=True)
            args.golden.write_text(json.dumps(golden_record(tr), indent=2, sort_keys=True) + "\n")
            print(f"golden\t{args.golden}")
            return 0
        try:
            verdict = compare_golden(tr, json.loads(args.golden.read_text()))
        except (OSError, json.JSONDecodeError, SchemaMismatch) as exc:
            print(f"error: golden comparison: {exc}", file=sys.stderr)
            return 1
        print(f"golden\t{'pass' if verdict.passed else 'fail'}")
        for f in verdict.failures:
            print(f"mismatch\t{f}")
        return 0 if verdict.passed else 1
    return 1 if tr.verdict == "failed" else 0


if __name__ == "__main__":
    sys.exit(main())
