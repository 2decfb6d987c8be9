#!/usr/bin/env python3
"""
PDMM Benchmark CLI
`run` solves one configuration over its seeds, `compare` tabulates several

Exit status: 0 when every seed stopped by tolerance, 1 when a seed hit
max_iter, 2 on configuration or data errors, 3 when a solve diverged.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
for _sub in ("core", "problems", "utils"):
    _path = os.path.join(_ROOT, _sub)
    if _path not in sys.path:
        sys.path.insert(0, _path)

from pydantic import ValidationError as SchemaError  # noqa: E402

from exceptions import PDMMError  # noqa: E402
from experiment_runner import ExperimentRunner, check_comparable, comparison_table  # noqa: E402
from run_config import RunConfig, load_run_configs  # noqa: E402

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

PROBLEM_ALIASES = {"toy-qp": "toy-qp", "toyqp": "toy-qp", "rpca": "rpca",
                   "grouplasso": "grouplasso", "group-lasso": "grouplasso"}


def _K(value: str):
    if value == "all":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"K must be an integer or 'all', got {value!r}")


def _eta(value: str):
    parts = [float(v) for v in value.split(",")]
    return parts[0] if len(parts) == 1 else parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Randomized primal-dual block coordinate solver benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run/sweep file; flags override its values")
    common.add_argument("--problem", choices=sorted(PROBLEM_ALIASES), help="Problem kind")
    common.add_argument("--instance", help="Instance file for rpca/grouplasso")
    common.add_argument("--data-seed", type=int, help="Seed of the generated problem data")
    common.add_argument("--variant", choices=["pdmm", "sadmm", "pjadmm", "rdbcd", "gsadmm-ref"])
    common.add_argument("--K", type=_K, help="Primal blocks per iteration, or 'all'")
    common.add_argument("--K-I", dest="K_I", type=int, help="Dual blocks per iteration (rdbcd)")
    common.add_argument("--rho", type=float)
    common.add_argument("--eta", type=_eta, help="Proximal weight, one value or comma-separated per block")
    common.add_argument("--tau", type=float, help="Override dual step (with --nu)")
    common.add_argument("--nu", type=float, help="Override backward step (with --tau)")
    common.add_argument("--sampler", choices=["uniform", "cyclic"])
    common.add_argument("--update-mode", dest="update_mode",
                        choices=["exact", "linearized-f", "linearized-penalty", "linearized-both"])
    common.add_argument("--preset", help="Step-size preset: table1, text-pdmm3, tuned-rpca")
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--seeds", help="Seed list such as 1..10 or 1,4,7")
    common.add_argument("--base-seed", dest="base_seed", type=int)
    common.add_argument("--track-h", dest="track_h", action="store_true", default=None,
                        help="Record the Lyapunov distance (needs a KKT reference)")
    common.add_argument("--record-time", dest="record_time", action="store_true", default=None,
                        help="Fill the time_s trace column")
    common.add_argument("--workers", type=int, help="Seeds solved in parallel processes")
    common.add_argument("--threads", type=int, help="Block updates in parallel threads")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--label", help="Run label used in file names")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-file", help="Also log to this file")

    sub.add_parser("run", parents=[common], help="Solve one configuration over its seeds")
    sub.add_parser("compare", parents=[common], help="Solve every variant of a sweep file and tabulate")
    return parser


def setup_logging(level: str, log_file: Optional[str]) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=getattr(logging, level), format="%(asctime)s - %(levelname)s - %(message)s",
                        handlers=handlers, force=True)


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for key in ("variant", "K", "K_I", "rho", "eta", "tau", "nu", "sampler", "update_mode", "preset", "tol",
                "max_iter", "seeds", "base_seed", "track_h", "record_time", "workers", "threads", "out", "label"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    problem: Dict[str, Any] = {}
    if args.problem is not None:
        problem["kind"] = PROBLEM_ALIASES[args.problem]
    if args.instance is not None:
        problem["instance"] = args.instance
    if args.data_seed is not None:
        problem["data_seed"] = args.data_seed
    if problem:
        overrides["problem"] = problem
    return overrides


def exit_status(summaries) -> int:
    if any(s.diverged for s in summaries):
        return EXIT_DIVERGED
    if all(s.all_converged for s in summaries):
        return EXIT_OK
    return EXIT_NOT_CONVERGED


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_file)
    logger = logging.getLogger("pdmm_cli")

    try:
        configs: List[RunConfig] = load_run_configs(args.config, overrides_from_args(args))
        if args.command == "run":
            if len(configs) != 1:
                raise PDMMError(f"{args.config} defines {len(configs)} variants; use 'compare'")
            summaries = [ExperimentRunner(configs[0]).run()]
        else:
            check_comparable(configs)
            summaries = [ExperimentRunner(cfg).run() for cfg in configs]
            print(comparison_table(summaries, configs[0].out).to_string(index=False))
    except (FileNotFoundError, ValueError, SchemaError, PDMMError) as e:
        logger.error(str(e))
        return EXIT_CONFIG

    return exit_status(summaries)


if __name__ == "__main__":
    sys.exit(main())
