"""Command line entry point: ``rsvolterra <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from .config import RunConfig, load_config
from .experiments import EXPERIMENTS, replay, run_experiment
from .report import ReportError, emit_report

RUN_KEYS = {"seed", "out", "threads"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsvolterra",
                                 description="Regime-switching Volterra experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=(EXPERIMENTS[name].__doc__ or "").strip().split("\n")[0])
        p.add_argument("--config", help="sectioned INI file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--paths", type=int, help="paths per Monte Carlo batch")
        p.add_argument("--threads", type=int)
        p.add_argument("--no-report", action="store_true")
        for f in fields(RunConfig):
            if f.name not in RUN_KEYS:
                p.add_argument(f"--{f.name}", dest=f"set_{f.name}", metavar="VALUE")
    p = sub.add_parser("replay", help="re-run a manifest and compare checksums")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p = sub.add_parser("report", help="write report.csv for a run directory")
    p.add_argument("run_dir")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "replay":
            ok, bad = replay(args.manifest, args.out)
            print("replay: identical checksums" if ok else f"replay: mismatch in {', '.join(bad)}")
            return 0 if ok else 1
        if args.command == "report":
            print(emit_report(args.run_dir))
            return 0
        over = {k[4:]: v for k, v in vars(args).items() if k.startswith("set_") and v is not None}
        for key in ("seed", "out", "threads"):
            if getattr(args, key) is not None:
                over[key] = getattr(args, key)
        if args.paths is not None:
            over["n_paths"] = args.paths
        cfg = load_config(args.config, over)
        out = run_experiment(args.command, cfg)
        if not args.no_report:
            emit_report(out)
        with open(out / "manifest.json", encoding="utf-8") as fh:
            print(json.dumps(json.load(fh)["summary"], indent=2, sort_keys=True))
        return 0
    except (ValueError, KeyError, FileNotFoundError, ReportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
