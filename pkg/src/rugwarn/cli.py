"""``rugwarn`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import config_schema, default_config_lines, load_config
from .errors import RugwarnError, StageFailure
from .stages import STAGES, run_pipeline, run_stage, write_json, write_manifest

COMMANDS = STAGES + ("pipeline",)

HELP = {
    "synth": "generate the synthetic labeled corpus (raw CSVs, labels, events, ground truth)",
    "ingest": "parse, dedup and cap raw CSVs into per-token normalized datasets",
    "patterns": "score Self / Matched / Circular wash-trading patterns per token",
    "features": "build windowed samples and write features.csv",
    "train": "split samples and fit logistic regression and random forest",
    "evaluate": "score the test split: metrics.json and error_profile.json",
    "ablate": "random forest with each feature group removed: ablation.json",
    "leadtime": "first-warning lead time per high-risk test token: lead_times.csv",
    "pipeline": "synth (unless an input dir is set), then every stage in order",
}


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON run config (env RUGWARN_CONFIG)")
    p.add_argument("--seed", type=int, help="global seed; overrides the config")
    p.add_argument("--threads", type=int, help="worker cap for forest training")
    p.add_argument("--out", metavar="DIR", help="output root; overrides paths.output_dir")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    epilog = (
        "Settings resolve as defaults < config file < RUGWARN_* environment < flags.\n"
        "Environment keys nest with double underscores, e.g. RUGWARN_MODELS__RANDOM_FOREST__N_TREES=50.\n\n"
        "Defaults:\n" + "\n".join(default_config_lines())
    )
    parser = argparse.ArgumentParser(
        prog="rugwarn",
        description="Token rug-pull early warning from transfer records.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        _common(sub.add_parser(name, help=HELP[name], description=HELP[name]))
    sch = sub.add_parser("schema", help="print or write the JSON schema of the run config")
    sch.add_argument("--write", metavar="PATH", help="write to PATH instead of stdout")
    dflt = sub.add_parser("defaults", help="print the fully resolved default config")
    _common(dflt)
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.threads is not None:
        out["threads"] = args.threads
    if args.out is not None:
        out["paths"] = {"output_dir": args.out}
    return out


def _fail(exc: RugwarnError, command: str) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "command": command, "exit_code": exc.code}
    if isinstance(exc, StageFailure):
        payload["stage"] = exc.stage
        payload["cause"] = type(exc.cause).__name__
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return exc.code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="rugwarn: %(levelname)s: %(message)s", stream=sys.stderr)
    if args.command == "schema":
        schema = config_schema()
        if args.write:
            write_json(args.write, schema)
        else:
            print(json.dumps(schema, indent=2, sort_keys=True))
        return 0
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "defaults":
            print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
            return 0
        result = run_pipeline(cfg) if args.command == "pipeline" else run_stage(args.command, cfg)
        write_manifest(cfg, args.command)
    except RugwarnError as exc:
        return _fail(exc, args.command)
    print(json.dumps({"status": "ok", "command": args.command, "result": result}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
