"""Command-line entry point: ``dynrisk <stage> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 invariant
violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dynrisk import pipeline
from dynrisk.config import defaults_yaml, load_config
from dynrisk.errors import DataError, DynriskError

STAGES = {
    "simulate": pipeline.simulate,
    "profile-dump": pipeline.profile_dump,
    "assemble": pipeline.assemble,
    "train": pipeline.train,
    "evaluate": pipeline.evaluate,
    "run": pipeline.run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynrisk",
                                     description="Dynamic entity risk features for fraud scoring.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="quickstart",
                        help="YAML path or bundled config name (default: quickstart)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed-override", type=int, help="replace the config's root seed")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    cfg = sub.add_parser("config", help="inspect configuration")
    cfg.add_argument("--print-defaults", action="store_true",
                     help="print the default configuration as YAML")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(defaults_yaml())
        return 0
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed_override, args.out)
        out = Path(cfg.output_dir)
        STAGES[args.command](cfg, out)
    except DynriskError as e:
        print(f"dynrisk: error: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, OSError) as e:
        print(f"dynrisk: error: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
