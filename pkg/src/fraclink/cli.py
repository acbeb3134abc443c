"""Command line driver: eig, solve, multiplicity and verify subcommands."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .driver import (EXIT_CONFIG, run_eig, run_multiplicity, run_solve,
                     run_verify)

_COMMANDS = {
    "eig": run_eig,
    "solve": run_solve,
    "multiplicity": run_multiplicity,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraclink",
        description="Spectral-Galerkin minimax solver and verification harness "
                    "for half-Laplacian semilinear problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("eig", "build the eigenbasis and emit spectrum/basis files"),
            ("solve", "locate nontrivial critical points at a fixed lambda"),
            ("multiplicity", "three-solution scan below an eigenvalue cluster"),
            ("verify", "run the verification suite")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, metavar="PATH",
                       help="JSON run configuration")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override the config rng_seed")
        p.add_argument("--threads", type=int, default=None, metavar="N",
                       help="override the config thread count")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.rng_seed = args.seed
            cfg.solver = replace(cfg.solver, rng_seed=args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg.threads = args.threads
        out_dir = args.out if args.out is not None else cfg.output_dir
        code, _ = _COMMANDS[args.command](cfg, out_dir, quiet=args.quiet)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
