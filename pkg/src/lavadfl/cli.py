"""``lavadfl`` command line.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .harness import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lavadfl", description="Solver-free decision-focused learning experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--jobs", type=int, help="worker threads for precompute")
    common.add_argument("--out", help=f"output root (default: ${harness.ENV_OUT} or ./runs)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write LP and dataset files")
    sub.add_parser("precompute", parents=[common], help="enumerate adjacent vertices")
    sub.add_parser("train", parents=[common], help="fit the configured method")
    sub.add_parser("evaluate", parents=[common], help="test regret into results.csv")
    rp = sub.add_parser("reproduce", parents=[common], help="run a full comparison table")
    rp.add_argument("--table", type=int, choices=(1, 2, 3), required=True)
    return p


def _run(args, cfg) -> object:
    seeds = [args.seed] if args.seed is not None else cfg["seeds"]
    if args.command == "reproduce":
        if args.seed is not None:
            cfg["seeds"] = seeds
        res = harness.cmd_reproduce(cfg, args.table)
        print((Path(cfg["out"]) / f"table{args.table}.md").read_text(), end="")
        return res
    step = {"generate": harness.cmd_generate, "precompute": harness.cmd_precompute,
            "train": harness.cmd_train, "evaluate": harness.cmd_evaluate}[args.command]
    out = []
    for s in seeds:
        res = step(cfg, s)
        out.append(res)
        summary = {k: v for k, v in res.items() if not isinstance(v, (list, dict))}
        print(json.dumps({"seed": s, **summary}))
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config, {"out": args.out, "jobs": args.jobs})
        _run(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        logging.getLogger("lavadfl").debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
