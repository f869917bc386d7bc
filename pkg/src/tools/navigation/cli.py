"""
Command-line front end for the pipeline commands.

    python src/cli.py gen-scenes --preset desk --seed 0 --out runs/desk
    python src/cli.py train-policy --arm memory --set ppo.updates=200
"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import commands
from .config import ARMS, describe, preset_names, resolve
from .errors import NavMemError


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file applied over the preset")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--preset", choices=preset_names(), default="desk")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="navmem", description="Memory-augmented image-goal navigation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-scenes", "collect-walks", "train-reach", "calibrate-tau", "gen-episodes"):
        sub.add_parser(name, parents=[common])

    train = sub.add_parser("train-policy", parents=[common])
    train.add_argument("--arm", choices=ARMS, default="memory")

    evaluate = sub.add_parser("eval", parents=[common])
    evaluate.add_argument("--arm", choices=ARMS, default="memory")
    evaluate.add_argument("--checkpoint", help="policy checkpoint; defaults to the arm's final checkpoint")
    evaluate.add_argument("--split", choices=commands.SPLITS)
    evaluate.add_argument("--trajectories", action="store_true", help="write per-step trajectory dumps")

    ablate = sub.add_parser("ablate", parents=[common])
    ablate.add_argument("--arms", nargs="+", default=["baseline", "augment", "memory"])
    ablate.add_argument("--seeds", nargs="+", type=int)
    ablate.add_argument("--report", dest="reports", action="append", default=[], metavar="LABEL=PATH",
                        help="add an explicit report.json under a label (repeatable)")

    sub.add_parser("show-config", parents=[common], help="print every config key with its resolved value")
    return parser


def _reports(items: Sequence[str]) -> dict:
    grouped = {}
    for item in items:
        label, _, path = item.partition("=")
        if not path:
            raise NavMemError(f"--report expects LABEL=PATH, got '{item}'")
        grouped.setdefault(label, []).append(path)
    return grouped


def run(args: argparse.Namespace) -> dict:
    overrides = list(args.overrides)
    if getattr(args, "trajectories", False):
        overrides.append("eval.trajectories=true")
    cfg = resolve(args.preset, args.config, args.seed, args.out, overrides)
    if args.command == "show-config":
        values = cfg.to_dict()
        return {key: {"value": values[key], "default": default, "description": text}
                for key, default, text in describe()}
    if args.command == "train-policy":
        return commands.cmd_train_policy(cfg, args.arm)
    if args.command == "eval":
        return commands.cmd_eval(cfg, args.arm, args.checkpoint, args.split)
    if args.command == "ablate":
        return commands.cmd_ablate(cfg, args.arms, args.seeds, _reports(args.reports) or None)
    return commands.COMMANDS[args.command](cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        summary = run(args)
    except NavMemError as e:
        logger.error("%s", e)
        return 1
    except OSError as e:
        logger.error("I/O error: %s", e)
        return 2
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0
