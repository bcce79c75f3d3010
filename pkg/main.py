#!/usr/bin/env python3
"""Main entry point for spectralflow: ground-state eigenpairs by particle gradient flow."""

import argparse
import logging
import sys

from loguru import logger

from src import cli
from src.utils.defaults import REFERENCE_N, REFERENCE_TOL, SWEEP_RUNS

LOG_FORMAT = "<level>{time:HH:mm:ss.SSS}</level> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"

# Standard logging goes to stderr so command output on stdout stays clean
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stderr
)

# INFO and above by default; --debug switches to DEBUG
logger.remove()
logger.add(sys.stderr, level="INFO", format=LOG_FORMAT)


def _int_list(text: str):
    return [int(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='spectralflow - lowest eigenpair of -Laplace + W via a two-layer network gradient flow')
    parser.add_argument('--debug', action='store_true',
                        help='Enable debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def run_options(p, runs: bool = False):
        p.add_argument('--config', required=True, help='Run configuration file')
        p.add_argument('--out', required=True, help='Output directory')
        p.add_argument('--seed', type=int, default=None, help='Override the config seed')
        p.add_argument('--reference-file', default=None, help='FD reference (.npz) for the L2 error column')
        if runs:
            p.add_argument('--runs', type=int, default=SWEEP_RUNS,
                           help=f'Independent runs (default: {SWEEP_RUNS})')
            p.add_argument('--parallel', type=int, default=1, help='Worker processes (default: 1)')

    run_options(sub.add_parser('run', help='Single run'))
    run_options(sub.add_parser('sweep', help='Independent runs with mean/variance summary'), runs=True)

    study = sub.add_parser('study', help='Width/batch comparison of final errors')
    run_options(study, runs=True)
    study.add_argument('--widths', type=_int_list, default=[100, 1000], help='Comma-separated m values')
    study.add_argument('--batches', type=_int_list, default=[100], help='Comma-separated n values')
    study.add_argument('--integrators', default=None,
                       help='Comma-separated integrators (default: the config integrator)')

    ref = sub.add_parser('reference', help='Finite-difference reference eigenpair')
    ref.add_argument('--potential', required=True, help='Potential, e.g. cos1d:100')
    ref.add_argument('--N', type=int, default=REFERENCE_N, help=f'Grid intervals (default: {REFERENCE_N})')
    ref.add_argument('--tol', type=float, default=REFERENCE_TOL, help='Eigen-residual tolerance')
    ref.add_argument('--out', required=True, help='Output .npz file')

    check = sub.add_parser('check', help='Run the invariant suite')
    check.add_argument('--seed', type=int, default=0, help='Seed of the randomized checks')

    plot = sub.add_parser('plot', help='Render run or sweep CSVs to SVG')
    plot.add_argument('csv', nargs='+', help='Run or summary CSV files')
    plot.add_argument('--out', required=True, help='Output SVG file')
    plot.add_argument('--metric', default='rayleigh', help='CSV column to plot (default: rayleigh)')
    scale = plot.add_mutually_exclusive_group()
    scale.add_argument('--log', dest='log_scale', action='store_true', default=None, help='Logarithmic y axis')
    scale.add_argument('--linear', dest='log_scale', action='store_false', help='Linear y axis')
    plot.add_argument('--reference-lambda', type=float, default=None, help='Reference eigenvalue line')
    plot.add_argument('--reference-file', default=None, help='Take the reference eigenvalue from this file')
    return parser


def main(argv=None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.remove()
        logger.add(sys.stderr, level="DEBUG", format=LOG_FORMAT)

    logger.debug(f"Command: {args.command}")
    if args.command == 'run':
        return cli.cmd_run(args.config, args.out, seed=args.seed, reference_file=args.reference_file)
    if args.command == 'sweep':
        return cli.cmd_sweep(args.config, args.runs, args.out, seed=args.seed,
                             parallel=args.parallel, reference_file=args.reference_file)
    if args.command == 'study':
        integrators = args.integrators.split(",") if args.integrators else None
        return cli.cmd_study(args.config, args.widths, args.batches, args.runs, args.out,
                             integrators=integrators, seed=args.seed, parallel=args.parallel,
                             reference_file=args.reference_file)
    if args.command == 'reference':
        return cli.cmd_reference(args.potential, args.N, args.out, tol=args.tol)
    if args.command == 'check':
        return cli.cmd_check(seed=args.seed)
    return cli.cmd_plot(args.csv, args.out, metric=args.metric, log_scale=args.log_scale,
                        reference_lambda=args.reference_lambda, reference_file=args.reference_file)


if __name__ == '__main__':
    sys.exit(main())
