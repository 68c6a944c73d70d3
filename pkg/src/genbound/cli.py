"""Command-line entry point: ``genbound <command> --config FILE [--set k=v ...] --out DIR``."""

import argparse
import os
import sys

from . import experiments as ex
from .config import load_config
from .errors import GenboundError

COMMANDS = ("gen-data", "train", "bound", "compare-trajectory", "sweep")


def build_parser():
    p = argparse.ArgumentParser(prog="genbound", description="Trajectory and flatness bounds for SGD.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="INI config file (defaults apply to missing keys)")
        c.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config key; repeatable")
        c.add_argument("--out", help="output directory (default: $GENBOUND_OUT/<command>)")
        c.add_argument("--no-plot", action="store_true", help="skip PNG figures")
        if name == "bound":
            c.add_argument("--trace", help="output directory of a previous train run")
    return p


def default_out(command):
    return os.path.join(os.environ.get("GENBOUND_OUT", "genbound-out"), command)


def run(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.no_plot:
        overrides.append("experiment.plot=false")
    cfg = load_config(args.config, overrides)
    out = args.out or default_out(args.command)
    if args.command == "gen-data":
        ex.run_gen_data(cfg, out)
    elif args.command == "train":
        ex.run_train(cfg, out)
    elif args.command == "bound":
        ex.run_bound(cfg, args.trace or cfg["bound.trace"], out)
    elif args.command == "compare-trajectory":
        ex.run_compare_trajectory(cfg, out)
    else:
        ex.run_sweep(cfg, out)
    return out


def main(argv=None):
    try:
        out = run(argv)
    except GenboundError as exc:
        print(f"genbound: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"genbound: I/O error: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
