"""``gsplat-distill`` command line.

Exit codes: 0 success, 1 validation failure (bad config, inputs or a failed
check), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..plyio import PlyParseError, PlySchemaError
from . import commands
from .config import ConfigError, load
from .io import ManifestError, PpmError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

COMMANDS = ("generate", "render", "noise-stats", "gradcheck", "eval-consistency", "ablate")
_NEEDS_CLOUD = ("render", "eval-consistency")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsplat-distill", description="Gaussian splatting with score distillation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name in _NEEDS_CLOUD:
            p.add_argument("cloud", type=Path, help="input PLY cloud")
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        p.add_argument("--seed", type=int, help="set every seed key")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (render also accepts a .ppm path)")
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = load(args.config, args.sets, args.seed)
    cmd = args.command
    if cmd == "generate":
        return commands.cmd_generate(cfg, args.out)
    if cmd == "render":
        return commands.cmd_render(cfg, args.cloud, args.out)
    if cmd == "noise-stats":
        return commands.cmd_noise_stats(cfg, args.out)
    if cmd == "gradcheck":
        return commands.cmd_gradcheck(cfg, args.out)
    if cmd == "eval-consistency":
        return commands.cmd_eval_consistency(cfg, args.cloud, args.out)
    return commands.cmd_ablate(cfg, args.out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except (ConfigError, ManifestError, PpmError, PlyParseError, PlySchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - surface everything else as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
