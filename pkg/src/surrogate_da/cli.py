"""Command-line entry point: ``surrogate-da {generate,baseline,run,evaluate,all,replicate}``."""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import driver

STAGES = {
    "generate": driver.stage_generate,
    "baseline": driver.stage_baseline,
    "run": driver.stage_run,
    "evaluate": driver.stage_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="surrogate-da",
                                     description="Surrogate observation operator twin experiment")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*STAGES, "all", "replicate"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON config file (defaults built in)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--output-dir", type=Path, help="override the config output_dir")
        if name == "replicate":
            sp.add_argument("--replicates", type=int, help="number of consecutive seeds")
    return parser


def load_config(args, parser):
    if args.config is None:
        cfg = driver.ExperimentConfig()
    else:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
            cfg = driver.ExperimentConfig.from_dict(raw)
        except FileNotFoundError:
            parser.error(f"config file not found: {args.config}")
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            parser.error(f"invalid config {args.config}: {exc}")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output_dir is not None:
        changes["output_dir"] = str(args.output_dir)
    if getattr(args, "replicates", None) is not None:
        changes["replicates"] = args.replicates
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args, parser)
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "all":
            report = driver.run_all(cfg, out)
            _print_report(report)
        elif args.command == "replicate":
            reports = driver.run_replicates(cfg, out)
            mean = np.mean([r.gamma for r in reports], axis=0)
            print("mean gamma x100: " + " ".join(f"{100 * g:.1f}" for g in mean))
        else:
            result = STAGES[args.command](cfg, out)
            if args.command == "evaluate":
                _print_report(result)
    except (OSError, ValueError, ArithmeticError, driver.SurrogateDAError) as exc:
        print(f"surrogate-da {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def _print_report(report):
    print("gamma x100: " + " ".join(f"{100 * g:.1f}" for g in report.gamma))
    print(f"rmse baseline {report.rmse_baseline:.4f}  method {report.rmse_method:.4f}")


if __name__ == "__main__":
    sys.exit(main())
