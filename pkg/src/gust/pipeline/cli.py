"""Command-line entry point ``gust``."""

import argparse
import logging
import sys

from ..exceptions import ConfigError, ConfigMismatch, GustError
from .config import PROFILES, load_config
from .manifest import Manifest
from .stages import STAGES, emit_report, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(prog="gust", description=(
        "Learn manufacturing-induced geometric uncertainty of metamaterial unit cells."))
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("report",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "report"
                           else "write KDE plots, summary and p-value tables")
        p.add_argument("--config", help="JSON file overriding the profile defaults")
        p.add_argument("--out", required=True, help="run directory (holds manifest.json)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--profile", choices=PROFILES, default="desk")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.profile, seed=args.seed)
        manifest = Manifest.open(args.out, cfg)
    except (ConfigError, ConfigMismatch) as exc:
        print(f"gust: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "report":
            files = emit_report(manifest)
            print(f"report written to {manifest.path('report')} ({len(files['kde_svg'])} plots)")
        else:
            run_stage(args.command, cfg, manifest)
            entry = manifest.stages[args.command]
            print(f"{args.command}: done ({entry['seconds']:.1f} s)")
    except (GustError, OSError, ValueError) as exc:
        print(f"gust: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
