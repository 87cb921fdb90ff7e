"""Command-line entry point: ``impchain {rstat,chi,specfun,liom,jump}``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 capacity
exceeded, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import CapacityError, ValidationError
from .cache import ENV_VAR, resolve_cache_dir
from .config import load_config
from .experiments import run_experiment

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_CAPACITY = 0, 1, 2, 3

COMMANDS = {
    "rstat": "level-spacing ratio <r> for full, folded and unfolded spectra",
    "chi": "typical fidelity susceptibility sweep over V",
    "specfun": "spectral function of a local operator",
    "liom": "nested-commutator ladder and LIOM residuals",
    "jump": "weak-link spectral jumps and their V scaling",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="impchain", description="Impurity spin-chain experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--cache", default=None, help=f"eigen-cache directory (default: ${ENV_VAR})")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        m = run_experiment(cfg, args.out, resolve_cache_dir(args.cache), args.workers)
    except ValidationError as exc:
        print(f"impchain: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CapacityError as exc:
        print(f"impchain: capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except OSError as exc:
        print(f"impchain: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{m.kind}: {len(m.files)} files, config {m.config_hash[:12]}, {m.wall_clock_s:.1f}s -> {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
