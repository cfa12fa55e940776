"""Command-line front end: ``afcsim <command> [--preset NAME | --config FILE] ...``.

Exit codes: 0 success, 1 configuration error, 2 analysis error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

from . import experiments
from .errors import AFCError, AnalysisError, ConfigurationError
from .scenario import PRESETS, SWEEP_AXES, load_scenario, parse_axis

log = logging.getLogger("afcsim")

SCENARIO_COMMANDS = ("efficiency", "sweep", "interference", "counts")


def _window(text: Optional[str]) -> Optional[Tuple[float, float]]:
    if text is None:
        return None
    parts = [p for p in text.replace(",", ":").split(":") if p.strip()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"window {text!r} must be start:stop (ns)")
    lo, hi = float(parts[0]), float(parts[1])
    if not hi > lo:
        raise argparse.ArgumentTypeError(f"window {text!r} is empty")
    return lo, hi


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afcsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="scenario INI file")
    src.add_argument("--preset", choices=PRESETS, help="bundled scenario")
    common.add_argument("--seed", type=_u64, help="override the scenario seed")
    common.add_argument("--out", type=Path, help="base directory for run folders (default: scenario outputs)")

    sub.add_parser("efficiency", parents=[common], help="echo efficiency of one comb")
    sw = sub.add_parser("sweep", parents=[common], help="efficiency over one or two comb parameters")
    sw.add_argument("--axis", action="append", default=[], metavar="NAME=SPEC",
                    help=f"replace the sweep axes; NAME in {SWEEP_AXES}, SPEC start:stop:num or a,b,c")
    sw.add_argument("--workers", type=int, default=1, help="worker processes")
    sub.add_parser("interference", parents=[common], help="echo/probe beat for probe phases 0 and pi")
    ct = sub.add_parser("counts", parents=[common], help="photon-counting histograms and fitted efficiency")
    ct.add_argument("--shots", type=int, help="override the number of shots")
    ct.add_argument("--inject-eta", type=float, help="replace the simulated echo by a scaled, delayed reference")

    fit = sub.add_parser("fit", help="analyse external bin_start_ns,count histograms")
    fit.add_argument("--histogram", help="histogram for a Gaussian fit (or a beat fit with --beat-window)")
    fit.add_argument("--window", type=_window,
                     help="fit window start:stop in ns (use --window=-400:400 for a negative start)")
    fit.add_argument("--reference", help="reference (empty pit) histogram")
    fit.add_argument("--echo", help="echo histogram")
    fit.add_argument("--reference-window", type=_window, help="reference fit window start:stop in ns")
    fit.add_argument("--echo-window", type=_window, help="echo fit window start:stop in ns")
    fit.add_argument("--beat-window", type=_window, help="fit a beat pattern in this window")
    fit.add_argument("--noise-level", type=float, help="counts per bin removed before the visibility")
    fit.add_argument("--out", type=Path, help="write report.json into a run folder under this directory")
    return parser


def _scenario(args):
    scenario = load_scenario(path=args.config, preset=args.preset, validate=False)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    if args.command == "sweep" and args.axis:
        axes = []
        for item in args.axis:
            name, _, spec = item.partition("=")
            name = {"alphal": "alphaL", "f": "F"}.get(name.strip().lower(), name.strip())
            if name not in SWEEP_AXES:
                raise ConfigurationError(f"--axis {item!r}: name must be one of {SWEEP_AXES}")
            axes.append((name, parse_axis(spec)))
        scenario = replace(scenario, sweep=tuple(axes))
    if args.command == "counts":
        if args.shots is not None:
            if args.shots < 0:
                raise ConfigurationError("--shots must be >= 0")
            scenario = replace(scenario, detector=replace(scenario.detector, shots=args.shots))
        if args.inject_eta is not None:
            scenario = replace(scenario, inject_eta=args.inject_eta)
    return scenario.validate()


def _print_report(report: dict, run_dir: Optional[Path]) -> None:
    for key, value in experiments.flat_items(report.get("results", {})):
        print(f"{key} = {value}")
    if run_dir is not None:
        print(f"run_dir = {run_dir}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            run_dir = experiments.make_run_dir(args.out, "external", "fit") if args.out else None
            report = experiments.run_fit(args.histogram, args.window, args.reference, args.echo,
                                         args.reference_window, args.echo_window, args.beat_window,
                                         args.noise_level, run_dir)
            _print_report(report, run_dir)
            return 0
        scenario = _scenario(args)
        if args.command == "sweep" and args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        base = args.out if args.out is not None else Path(scenario.outputs)
        run_dir = experiments.make_run_dir(base, scenario.name, args.command)
        log.info("running %s on %s into %s", args.command, scenario.source, run_dir)
        try:
            if args.command == "efficiency":
                report = experiments.run_efficiency(scenario, run_dir)
            elif args.command == "sweep":
                report = experiments.run_sweep(scenario, run_dir, workers=args.workers)
            elif args.command == "interference":
                report = experiments.run_interference(scenario, run_dir)
            else:
                report = experiments.run_counts(scenario, run_dir)
        finally:
            if not any(run_dir.iterdir()):
                run_dir.rmdir()
        _print_report(report, run_dir)
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 2
    except AFCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
