"""
SIM Simulator - Command-line front end

Runs one scenario per invocation: near-field beamfocusing, DOA estimation with
a hybrid optical-electronic network, wave-domain DFT spectra, multi-slot channel
estimation and the Rayleigh-distance utility.

Usage:
    python main.py beamfocus --config scenarios/beamfocus.toml
    python main.py doa-train --config scenarios/doa_train.toml --jobs 4
    python main.py doa-eval --config scenarios/doa_eval.toml --out runs/eval
    python main.py rayleigh

Exit codes:
    0 - every output was written
    1 - invalid scenario or arguments
    2 - runtime failure
"""

import argparse
import json
import logging
import sys

from config import (
    SCENARIO_KINDS, SCENARIO_DESCRIPTIONS, OUTPUT_ROOT_ENV,
    EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME,
)
from errors import ValidationError, ConfigurationError, SimError
from experiments import run_scenario
from scenario import Scenario, load_scenario, validate_scenario, resolve_output_dir

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'


def command_name(kind):
    """Subcommand spelling of a scenario kind (doa_train -> doa-train)."""
    return kind.replace("_", "-")


class SimArgumentParser(argparse.ArgumentParser):
    """Parser whose usage errors raise ValidationError instead of exiting with 2."""

    def error(self, message):
        raise ValidationError(message, "arguments")


def build_parser():
    """
    Argument parser with one subcommand per scenario kind.

    Subparsers inherit the parser class, so malformed invocations at any
    level surface as ValidationError.

    @return: SimArgumentParser
    """
    parser = SimArgumentParser(
        prog="sim",
        description="Stacked intelligent metasurface simulator",
        epilog=f"Without --out or output_dir, runs go to ${OUTPUT_ROOT_ENV}/<name> or runs/<name>.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings only")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for kind in SCENARIO_KINDS:
        sub = subparsers.add_parser(command_name(kind), help=SCENARIO_DESCRIPTIONS[kind])
        sub.set_defaults(kind=kind)
        sub.add_argument("--config", metavar="PATH",
                         help="scenario TOML file (defaults are used when omitted)")
        sub.add_argument("--seed", type=int, help="override the scenario seed")
        sub.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
        sub.add_argument("--out", metavar="DIR", help="output directory")
    return parser


class SimulatorApp:
    """
    One command-line invocation.

    Attributes:
        args: Parsed argparse namespace
        scenario: Resolved Scenario (after load)
        out_dir: Run directory (after load)
    """

    def __init__(self, args):
        """
        Initialize the application.

        @param args: Parsed arguments
        """
        self.args = args
        self.scenario = None
        self.out_dir = None

    def load(self):
        """Read the scenario, apply overrides and check it matches the subcommand."""
        args = self.args
        if args.jobs < 1:
            raise ValidationError(f"must be >= 1, got {args.jobs}", "--jobs")
        if args.config:
            scenario = load_scenario(args.config)
        else:
            scenario = Scenario(name=args.kind, kind=args.kind)
        if scenario.kind != args.kind:
            raise ValidationError(
                f"scenario is a {scenario.kind!r} scenario, not {args.kind!r}", "kind")
        self.scenario = scenario.with_overrides(seed=args.seed)
        validate_scenario(self.scenario)
        self.out_dir = resolve_output_dir(self.scenario, args.out)

    def run(self):
        """
        Load and run the scenario, mapping failures to exit codes.

        @return: Process exit code
        """
        try:
            self.load()
            manifest, summary = run_scenario(self.scenario, self.out_dir, self.args.jobs)
        except (ValidationError, ConfigurationError) as exc:
            logger.error("%s", exc)
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        except SimError as exc:
            logger.error("run failed: %s", exc)
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        except Exception:
            logger.exception("unexpected failure")
            return EXIT_RUNTIME

        print(json.dumps({"output_dir": self.out_dir, "outputs": len(manifest.outputs),
                          "summary": summary}, indent=2, sort_keys=True, default=str))
        return EXIT_OK


def main(argv=None):
    """Entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    return SimulatorApp(args).run()


if __name__ == "__main__":
    sys.exit(main())
