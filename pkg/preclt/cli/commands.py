"""
Command-line subcommands: simulate, verify, sweep, report.

Each handler takes the parsed arguments and returns an exit code; failures
are raised as PrecltError subclasses and mapped to exit codes in run_cli.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from ..core.config import configure_logging
from ..core.exceptions import (
    EXIT_FAILURE,
    EXIT_OK,
    AcceptanceFailure,
    ConfigParseError,
    ConfigValidationError,
    ReportIOError,
    exit_code_for,
    log_error,
)
from ..core.experiment_config import Mode, config_from_dict, load_config
from ..services.acceptance import (
    SuiteResult,
    run_calibration_suite,
    run_identity_suite,
    run_pilot,
    run_statistical_suite,
)
from ..services.experiments import run_experiment
from ..services.reports import report_service, verdict_table, write_report

logger = logging.getLogger(__name__)

# =============================================================================
# ARGUMENT HELPERS
# =============================================================================

def _sigma_arg(value: str) -> Dict[str, Any]:
    """identity | diagonal | ar1:<r>"""
    kind, _, param = value.partition(":")
    if kind == "ar1":
        if not param:
            raise argparse.ArgumentTypeError("ar1 needs a parameter, e.g. ar1:0.5")
        try:
            return {"kind": "ar1", "params": {"r": float(param)}}
        except ValueError:
            raise argparse.ArgumentTypeError(f"ar1 parameter must be a number, got {param!r}")
    if kind in ("identity", "diagonal") and not param:
        return {"kind": kind}
    raise argparse.ArgumentTypeError(f"sigma must be identity, diagonal or ar1:<r>, got {value!r}")


def _seed_arg(value: str) -> int:
    try:
        seed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {value!r}")
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def _grid_arg(value: str) -> List[int]:
    """n=200,400,800"""
    key, _, values = value.partition("=")
    if key != "n" or not values:
        raise argparse.ArgumentTypeError(f"grid must look like n=200,400,800, got {value!r}")
    try:
        return [int(v) for v in values.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid values must be integers, got {values!r}")


def _float_list(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--seed", type=_seed_arg, help="master seed (64-bit unsigned)")
    parser.add_argument("--replicates", "-M", type=int, help="number of Monte Carlo replicates")
    parser.add_argument("--workers", type=int, help="worker processes (PRECLT_WORKERS wins when set)")
    parser.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="preclt",
        description="Monte Carlo verification of CLTs for diagonal entries of sample precision matrices",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,verify,sweep,report}")
    sub.required = True

    simulate = sub.add_parser("simulate", help="run one experiment and write its report")
    _add_run_flags(simulate)
    simulate.add_argument("--mode", choices=[m.value for m in Mode])
    simulate.add_argument("--p", type=int)
    simulate.add_argument("--n", type=int)
    simulate.add_argument("--dist", help="gaussian, uniform, student_t or shifted_exponential")
    simulate.add_argument("--sigma", type=_sigma_arg, help="identity, diagonal or ar1:<r>")
    simulate.add_argument("--q", help="comma-separated 1-based indices")
    simulate.add_argument("--normalizer", choices=["rho_limit", "rho_n"])
    simulate.add_argument("--qr-method", choices=["mgs", "cgs2"])
    simulate.add_argument("--allow-low-dof", action="store_true", default=None)

    verify = sub.add_parser("verify", help="run the built-in acceptance suite")
    tier = verify.add_mutually_exclusive_group()
    tier.add_argument("--fast", action="store_true", help="identity audits only (default)")
    tier.add_argument("--full", action="store_true", help="identity audits and the statistical suite")
    verify.add_argument("--seed", type=_seed_arg, default=0)
    verify.add_argument("--instances", type=int, help="identity instances (default from acceptance.json)")
    verify.add_argument("--check", action="append", help="restrict --full to named statistical checks")
    verify.add_argument("--workers", type=int)
    verify.add_argument("--out", type=Path, help="also write verify.json and verdicts.txt here")
    verify.add_argument("--pilot", type=int, metavar="K",
                        help="re-run the statistical checks under K fresh seeds and write pilot.json")

    sweep = sub.add_parser("sweep", help="single-entry runs over an (n, y, distribution) grid")
    _add_run_flags(sweep)
    sweep.add_argument("--grid", type=_grid_arg, help="n=200,400,800")
    sweep.add_argument("--y", type=_float_list, help="comma-separated aspect ratios")
    sweep.add_argument("--dist", help="comma-separated distribution names")
    sweep.add_argument("--normalizer", choices=["rho_limit", "rho_n"])

    report = sub.add_parser("report", help="regenerate the summary from an existing samples.csv")
    report.add_argument("--csv", type=Path, required=True)
    report.add_argument("--config", type=Path, help="config JSON (default: summary.json next to the CSV)")
    report.add_argument("--out", type=Path, help="output directory (default: the CSV's directory)")

    return parser

# =============================================================================
# SUBCOMMAND HANDLERS
# =============================================================================

def cmd_simulate(args: argparse.Namespace) -> int:
    overrides = {
        "mode": args.mode,
        "p": args.p,
        "n": args.n,
        "distribution": args.dist,
        "sigma": args.sigma,
        "q_indices": args.q,
        "replicates": args.replicates,
        "master_seed": args.seed,
        "normalizer": args.normalizer,
        "qr_method": args.qr_method,
        "allow_low_dof": args.allow_low_dof,
        "output_dir": str(args.out) if args.out else None,
    }
    cfg = load_config(args.config, overrides)
    summary = run_experiment(cfg, args.workers)
    report = write_report(summary, cfg)
    print(report_service.render_verdicts(summary, report.verdicts), end="")
    if not report.passed:
        failed = [v.name for v in report.verdicts if v.failed]
        logger.warning(f"Failed verdicts: {', '.join(failed)}")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    overrides = {
        "mode": Mode.SWEEP.value,
        "n_ladder": args.grid,
        "y_values": args.y,
        "distributions": args.dist,
        "normalizer": args.normalizer,
        "replicates": args.replicates,
        "master_seed": args.seed,
        "output_dir": str(args.out) if args.out else None,
    }
    cfg = load_config(args.config, overrides)
    summary = run_experiment(cfg, args.workers)
    write_report(summary, cfg)
    for row in summary.extra["sweep"]["rows"]:
        print(
            f"{row['distribution']:<20} y={row['y']:<6g} n={row['n']:<6d} p={row['p']:<5d} "
            f"rho={row['rho_limit']:.6g} ref={_fmt(row['reference_var'])} var={_fmt(row['variance'])} "
            f"ks={_fmt(row['ks'])}"
        )
    return EXIT_OK


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6g}"


def _config_for_csv(args: argparse.Namespace):
    if args.config is not None:
        return load_config(args.config)
    sibling = args.csv.parent / "summary.json"
    try:
        document = json.loads(sibling.read_text(encoding="utf-8"))
    except OSError as e:
        raise ReportIOError(f"No --config given and {sibling} cannot be read: {e}")
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"{sibling}:{e.lineno}:{e.colno}: {e.msg}")
    return config_from_dict(document["config"])


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _config_for_csv(args)
    report = report_service.regenerate(args.csv, cfg, args.out)
    logger.info(f"Summary regenerated at {report.summary_path}")
    return EXIT_OK


def _write_suites(out: Path, suites: List[SuiteResult], table: str) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        payload = {s.name: dict(s.to_dict(), verdicts=[v.to_dict() for v in s.verdicts]) for s in suites}
        (out / "verify.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n",
                                         encoding="utf-8")
        (out / "verdicts.txt").write_text(table, encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Cannot write verification report to {out}: {e}")


def _write_pilot(out: Optional[Path], record: Dict[str, Any]) -> None:
    target = (out or Path(".")) / "pilot.json"
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Cannot write pilot record to {target}: {e}")
    logger.info(f"Pilot record written to {target}")


def cmd_verify(args: argparse.Namespace) -> int:
    if args.pilot is not None:
        if args.pilot < 2:
            raise ConfigValidationError(f"--pilot needs at least 2 seeds, got {args.pilot}")
        _write_pilot(args.out, run_pilot(args.pilot, args.workers, args.check))
        return EXIT_OK
    suites = [run_identity_suite(args.instances, args.seed), run_calibration_suite()]
    if args.full:
        suites.append(run_statistical_suite(args.workers, args.check))
    verdicts = [v for s in suites for v in s.verdicts]
    tier = "full" if args.full else "fast"
    instances = suites[0].details.get("instances", 0)
    table = verdict_table(f"verify --{tier}", "-", args.seed, instances, verdicts)
    print(table, end="")
    if args.out:
        _write_suites(args.out, suites, table)
    failures = [f for s in suites for f in s.failures] + [v.name for v in verdicts if v.failed]
    if any(not s.passed for s in suites):
        raise AcceptanceFailure(f"{sum(v.failed for v in verdicts)} verdicts failed: {', '.join(failures[:10])}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "report": cmd_report,
}

# =============================================================================
# ENTRY POINT
# =============================================================================

def run_cli(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv and run one subcommand.

    Returns:
        0 on success, 1 on computation, validation or acceptance failures,
        2 on usage errors, 3 on I/O errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return exit_code_for(e)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        return log_error(e)


def main() -> None:
    """Console-script entry point"""
    configure_logging()
    sys.exit(run_cli(sys.argv[1:]))
