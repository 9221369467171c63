#!/usr/bin/env python3
"""
homeofit harness
================

Command-line entry point: ``python -m harness.run_harness <command> ...``.

Commands: construct, fit, baseline, report, info. The JSON envelope of every
run goes to stdout, logs go to stderr and ``run.log``. Exit codes: 0 success,
2 input or precondition failure, 3 optimisation failure.
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from harness.config import HARNESS_CONFIG, LOGGING_CONFIG
from harness.tool_registry import ToolRegistry

logger = logging.getLogger(__name__)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _add_target(parser: argparse.ArgumentParser, grids: bool = True):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--target", choices=["f1", "f2", "f3", "f4", "pes"])
    source.add_argument("--dataset", help="CSV dataset with header x0[,x1...],value")
    parser.add_argument("--out", help="run directory")
    if grids:
        parser.add_argument("--val-dataset", dest="val_dataset")
        parser.add_argument("--train-points", dest="train_points", type=_int_list)
        parser.add_argument("--val-points", dest="val_points", type=_int_list)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homeofit", description=HARNESS_CONFIG["description"])
    commands = parser.add_subparsers(dest="command", required=True)

    construct = commands.add_parser("construct", help="exact path f = p o h")
    _add_target(construct, grids=False)
    construct.add_argument("--n-scan", dest="n_scan", type=int)
    construct.add_argument("--plateau-tol", dest="plateau_tol", type=float)
    construct.add_argument("--eps", type=float)

    fit = commands.add_parser("fit", help="learned homeomorphism fit")
    _add_target(fit)
    fit.add_argument("--degree", type=int, required=True)
    fit.add_argument("--fixed-coeffs", dest="fixed_coeffs", type=_float_list)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--steps", type=int)
    fit.add_argument("--n-blocks", dest="n_blocks", type=int)
    fit.add_argument("--width", type=int)
    fit.add_argument("--lipschitz", type=float)
    fit.add_argument("--lr", type=float)

    baseline = commands.add_parser("baseline", help="direct polynomial fit")
    _add_target(baseline)
    degree = baseline.add_mutually_exclusive_group(required=True)
    degree.add_argument("--degree", type=int)
    degree.add_argument("--sweep", help="degree range LO:HI")
    baseline.add_argument("--variables", choices=["internal", "morse"], default="internal")
    baseline.add_argument("--no-ridge-fallback", dest="ridge_fallback", action="store_false")
    baseline.add_argument("--seed", type=int, default=0)

    report = commands.add_parser("report", help="comparison table from report files")
    report.add_argument("reports", nargs="+")
    report.add_argument("--out")

    commands.add_parser("info", help="list registered commands")
    return parser


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=getattr(logging, level or LOGGING_CONFIG["level"], logging.INFO),
        format=LOGGING_CONFIG["format"],
        stream=sys.stderr,
    )


def show_info(registry: ToolRegistry):
    print("=" * 60)
    print(f"🔍 {HARNESS_CONFIG['name']} {HARNESS_CONFIG['version']}")
    print("=" * 60)
    for i, name in enumerate(registry.list_tool_names(), 1):
        info = registry.get_tool(name).get_schema_info()
        print(f"   {i:2d}. {name:<10} - {info['description']}")
        if info["required_params"]:
            print(f"       🔑 Required parameters: {', '.join(info['required_params'])}")
    print("=" * 60)


def params_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    params = {k: v for k, v in vars(args).items() if k != "command" and v is not None}
    if params.get("ridge_fallback") is True:
        params.pop("ridge_fallback")
    return params


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    registry = ToolRegistry()

    if args.command == "info":
        show_info(registry)
        return 0

    tool = registry.get_tool(args.command)
    if tool is None:
        logger.error(f"❌ Command {args.command} is not registered")
        return 2
    logger.info(f"🚀 Running {args.command}")
    envelope = tool.execute(params_from_args(args))
    print(json.dumps(envelope, indent=2, default=str))
    return int(envelope["exit_code"])


if __name__ == "__main__":
    sys.exit(main())
