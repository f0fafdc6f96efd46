"""Command-line interface: ``run``, ``verify-theorems``, ``summarize`` and ``sweep``.

Exit codes: 0 success, 1 failed cells or failed checks, 2 usage or configuration error.
"""
import argparse
import logging
import sys
from pathlib import Path

from coreqn import settings

from .config import describe_config_keys, load_config
from .errors import ConfigError, CoresetError, InvalidArgumentError
from .harness import SWEEP_PARAMETERS, run_experiment, run_sensitivity_sweep, summarize_file, verify_theorems

logger = logging.getLogger(__name__)


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_run_options(parser):
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--seed", type=_seed, help="override the master seed")
    parser.add_argument("--output-dir", help="override the output directory")
    parser.add_argument("--threads", type=_positive_int,
                        help="concurrent cells (default: config, then COREQN_THREADS, then 1)")


def build_parser():
    epilog = describe_config_keys()
    parser = argparse.ArgumentParser(
        prog="coresets",
        description="Quasi-Newton Bayesian coresets: experiments, summaries and theorem checks.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiment grid of a config",
                              epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_run_options(run)
    run.set_defaults(handler=_run)

    verify = commands.add_parser("verify-theorems", help="exact-moment convergence and exact-coreset checks")
    verify.add_argument("--seed", type=_seed, default=settings.DEFAULT_SEED)
    verify.set_defaults(handler=_verify)

    summary = commands.add_parser("summarize", help="median and quartiles of a results.csv")
    summary.add_argument("--input", required=True, help="results.csv written by run")
    summary.add_argument("--output", help="summary path (default: summary.csv next to the input)")
    summary.set_defaults(handler=_summarize)

    sweep = commands.add_parser("sweep", help="rerun the QNC cells for several values of one parameter",
                                epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_run_options(sweep)
    sweep.add_argument("--parameter", required=True, choices=tuple(SWEEP_PARAMETERS))
    sweep.add_argument("--values", required=True, nargs="+", type=float)
    sweep.set_defaults(handler=_sweep)
    return parser


def _error(message):
    print(f"error: {message}", file=sys.stderr)


def _load(args):
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError("config", f"config file not found: {path}")
    return load_config(path).with_overrides(
        seed=args.seed, output_dir=args.output_dir, threads=args.threads
    )


def _report_failures(table):
    failed = int((table["status"] != "ok").sum())
    print(f"{len(table)} cells, {failed} failed")
    return 1 if failed else 0


def _run(args):
    config = _load(args)
    table = run_experiment(config)
    print(f"results written to {Path(config.output_dir) / 'results.csv'}")
    return _report_failures(table)


def _sweep(args):
    config = _load(args)
    values = []
    for value in args.values:
        if SWEEP_PARAMETERS[args.parameter] is int and not value.is_integer():
            raise ConfigError(f"qnc.{args.parameter}", f"expected an integer, got {value:g}")
        values.append(value)
    table = run_sensitivity_sweep(config, args.parameter, values)
    print(f"sweep written to {Path(config.output_dir) / f'sweep_{args.parameter}.csv'}")
    return _report_failures(table)


def _summarize(args):
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError("input", f"results file not found: {path}")
    try:
        summary, output = summarize_file(path, args.output)
    except InvalidArgumentError as exc:
        raise ConfigError("input", str(exc)) from exc
    print(f"wrote {len(summary)} summary rows to {output}")
    return 0


def _verify(args):
    result = verify_theorems(args.seed)
    report = result.convergence
    setup = result.convergence_setup
    verdict = "ok" if report.holds(result.ratio_bound) else "FAILED"
    print(
        "Convergence (d={d}, N={N}, M={M}, gamma={gamma:g}, tau={tau:g}, K={K})".format(**setup)
    )
    print(f"  xi = {report.xi:.6g}, eta = {report.eta:.6g}")
    print(f"  max contraction ratio = {max(report.contraction_ratios):.6g} "
          f"(bound {result.ratio_bound}): {verdict}")
    print(f"  KL at w* = {report.kl_at_w_star:.3e}")

    feasible = result.feasible_count
    verdict = "ok" if feasible >= result.required_feasible else "FAILED"
    print("Exact coreset (d={d}, N={N}, M={M})".format(**result.feasibility_setup))
    print(f"  feasible with KL <= {result.kl_tolerance:g} in {feasible}/{len(result.feasibility)} "
          f"seeds (need {result.required_feasible}): {verdict}")
    return 0 if result.holds() else 1


def cli_main(argv=None):
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    logging.basicConfig(
        level=getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO),
        format=settings.LOG_FORMAT,
    )
    try:
        return args.handler(args)
    except ConfigError as exc:
        _error(exc)
        return 2
    except CoresetError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _error(exc)
        return 1
