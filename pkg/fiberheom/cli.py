#!/usr/bin/env python3
"""
fiberheom command line.

    fiberheom <decay|map|dd|dd-map|validate|converge> --config run.yaml [--out out.csv]
              [--workers N] [--nc N] [--dt X] [--log-level LEVEL]

Exit codes: 0 success, 1 validation FAIL, 2 usage or configuration error,
3 solver failure.
"""

import argparse
import logging
import sys
import time

from fiberheom import __version__
from fiberheom.config import ConfigError, Experiment, load_config
from fiberheom.executor import build_metadata, run_experiment
from fiberheom.writers import write_csv, write_metadata

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

_HELP = {
    Experiment.DECAY: "single trajectory without control",
    Experiment.MAP: "distance-to-threshold and non-Markovianity over the (eta, L_c) grid",
    Experiment.DD: "single trajectory under a CPMG or UDD schedule",
    Experiment.DD_MAP: "residual concurrence without control, with CPMG and with UDD over the grid",
    Experiment.VALIDATE: "compare the solver with the pure-dephasing oracle",
    Experiment.CONVERGE: "compare concurrence traces at N_c and N_c + 2",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberheom",
        description=(
            "Polarization entanglement decay and dynamical decoupling in birefringent fibers."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML or JSON run configuration")
    common.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    common.add_argument("--workers", type=int, default=None, help="worker processes for grids")
    common.add_argument("--nc", type=int, default=None, help="hierarchy truncation level N_c")
    common.add_argument("--dt", type=float, default=None, help="RK4 step in microseconds")
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity (logs go to stderr)",
    )

    subparsers = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for experiment, text in _HELP.items():
        subparsers.add_parser(experiment.value, parents=[common], help=text, description=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the fiberheom CLI."""
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )

    overrides = {
        "experiment": args.experiment,
        "integrator.max_depth": args.nc,
        "integrator.dt": args.dt,
        "workers": args.workers,
        "output_path": args.out,
    }
    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE

    start = time.perf_counter()
    try:
        result = run_experiment(config)
    except ValueError as e:
        logger.error(f"Invalid run: {e}")
        return EXIT_USAGE
    except RuntimeError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME
    seconds = time.perf_counter() - start

    write_csv(result.fieldnames, result.rows, config.output_path)
    if config.output_path is not None:
        write_metadata(config.output_path, build_metadata(config, result, seconds))

    if result.passed is False:
        logger.error("Validation FAIL")
        return EXIT_VALIDATION_FAILED
    if result.passed:
        logger.info("Validation PASS")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
