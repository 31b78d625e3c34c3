"""Command-line interface: analytic figure tables and Monte Carlo sweeps.

Subcommands:
    moar      maximum antenna ratio vs. rate for MRC / ZF / L-MMSE
    rates     achievable-rate curves vs. SNR, including mismatched L-MMSE
    se-check  empirical output SIR vs. the state-evolution prediction
    ser       Monte Carlo symbol-error-rate sweep

Every run writes a CSV, a rendered PNG next to it (disable with
--no-figure), and a .manifest.json recording all resolved parameters.
Exit codes: 0 success, 1 configuration error, 2 runtime/divergence,
3 I/O error.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import amp_core, analysis, harness, linear_eq, model


class _CliParser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; remap to the config-error code.
    def error(self, message):
        raise harness.ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="mimoeq", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "moar": "antenna-ratio limits for a target SNR loss (analytic)",
        "rates": "achievable-rate curves vs. SNR (analytic)",
        "se-check": "empirical SIR vs. state-evolution prediction (Monte Carlo)",
        "ser": "symbol-error-rate sweep (Monte Carlo)",
    }
    for name, desc in descriptions.items():
        cmd = sub.add_parser(name, help=desc, description=desc)
        cmd.add_argument("--config", type=Path, help="key=value experiment config file")
        cmd.add_argument("--bs-antennas", type=int, help="number of base-station antennas B")
        cmd.add_argument("--users", type=int, help="number of single-antenna users U")
        cmd.add_argument("--snr-db-start", type=float, help="SNR sweep start [dB]")
        cmd.add_argument("--snr-db-stop", type=float, help="SNR sweep stop [dB]")
        cmd.add_argument("--snr-db-step", type=float, help="SNR sweep step [dB]")
        cmd.add_argument("--trials", type=int, help="Monte Carlo frames per sweep point")
        cmd.add_argument("--seed", type=int, help="master seed for all substreams")
        cmd.add_argument("--iters", type=int, help="iteration budget of the AMP-family equalizers")
        cmd.add_argument("--algorithms", type=str, help="comma list, e.g. zf,lmmse,nope")
        cmd.add_argument("--constellation", choices=model.CONSTELLATIONS, help="transmit constellation")
        cmd.add_argument("--output", type=Path, help="output CSV path")
        cmd.add_argument("--workers", type=int, help="parallel worker processes (default 1)")
        cmd.add_argument("--es-prime", type=float, help="assumed signal power for lmmse_mismatched (linear)")
        cmd.add_argument("--gain-profile", type=str, help="uniform | loguniform:lo,hi | explicit:g1,g2,...")
        cmd.add_argument("--no-early-stop", action="store_true", help="always run the full iteration budget")
        cmd.add_argument("--no-figure", action="store_true", help="skip rendering the PNG figure")
        if name == "moar":
            cmd.add_argument("--delta-snr-db", type=float, help="target SNR loss [dB] (default 1)")
            cmd.add_argument("--rate-start", type=float, help="rate grid start (default 0.1)")
            cmd.add_argument("--rate-stop", type=float, help="rate grid stop (default 5.0)")
            cmd.add_argument("--rate-step", type=float, help="rate grid step (default 0.1)")
        if name == "rates":
            cmd.add_argument("--beta", type=float, help="antenna ratio for the analytic curves (default U/B)")
            cmd.add_argument(
                "--training-symbols", type=int, help="samples behind the mismatched-power percentile (default 2U)"
            )
        if name == "ser":
            cmd.add_argument(
                "--format",
                choices=("wide", "long"),
                default="wide",
                help="wide: one ser_* column per algorithm; long: sweep-row schema",
            )
    return parser


_OVERRIDE_KEYS = (
    ("bs_antennas", "bs_antennas"),
    ("users", "users"),
    ("trials", "trials"),
    ("seed", "seed"),
    ("iters", "iterations"),
    ("constellation", "constellation"),
    ("workers", "workers"),
    ("es_prime", "es_prime"),
    ("delta_snr_db", "delta_snr_db"),
    ("rate_start", "rate_start"),
    ("rate_stop", "rate_stop"),
    ("rate_step", "rate_step"),
    ("beta", "beta"),
    ("training_symbols", "training_symbols"),
)


def resolve_spec(args) -> harness.ExperimentSpec:
    """Defaults <- config file <- command-line flags, in increasing priority."""
    default_constellation = "gaussian" if args.command == "se-check" else "qpsk"
    if args.config is not None:
        spec = harness.load_spec(args.config, default_constellation=default_constellation)
    else:
        spec = harness.ExperimentSpec(
            base=model.SystemConfig(bs_antennas=128, users=96, constellation=default_constellation)
        )
    values = {}
    for flag, key in _OVERRIDE_KEYS:
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    if args.algorithms is not None:
        values["algorithms"] = harness._parse_algorithms(args.algorithms)
    if args.gain_profile is not None:
        values["gain_profile"] = harness._parse_gain_profile(args.gain_profile)

    base = spec.base
    base_updates = {}
    for key in ("bs_antennas", "users", "constellation"):
        if key in values:
            base_updates[key] = values.pop(key)
    if "iterations" in values:
        base_updates["max_iterations"] = values.pop("iterations")
    if "seed" in values:
        base_updates["master_seed"] = values.pop("seed")
    if "es_prime" in values:
        base_updates["mismatched_power"] = values.pop("es_prime")
    try:
        if base_updates:
            base = replace(base, **base_updates)
        spec_updates = {"base": base}
        if args.snr_db_start is not None or args.snr_db_stop is not None or args.snr_db_step is not None:
            spec_updates["sweep_variable"] = "snr_db"
            spec_updates["sweep_start"] = (
                args.snr_db_start if args.snr_db_start is not None else spec.sweep_start
            )
            spec_updates["sweep_stop"] = args.snr_db_stop if args.snr_db_stop is not None else spec.sweep_stop
            spec_updates["sweep_step"] = args.snr_db_step if args.snr_db_step is not None else spec.sweep_step
        for key in ("trials", "workers", "delta_snr_db", "rate_start", "rate_stop", "rate_step", "training_symbols"):
            if key in values:
                spec_updates[key] = values.pop(key)
        if "beta" in values:
            spec_updates["beta_override"] = values.pop("beta")
        if "algorithms" in values:
            spec_updates["algorithms"] = values.pop("algorithms")
        if "gain_profile" in values:
            spec_updates["gain_profile"] = values.pop("gain_profile")
        if args.output is not None:
            spec_updates["output"] = args.output
        if args.no_early_stop:
            spec_updates["early_stop"] = False
        return replace(spec, **spec_updates)
    except ValueError as exc:
        if isinstance(exc, harness.ConfigError):
            raise
        raise harness.ConfigError(str(exc)) from exc


def run_command(args) -> list:
    spec = resolve_spec(args)
    output = spec.output if spec.output is not None else Path(f"{args.command.replace('-', '_')}.csv")
    render = not args.no_figure
    if args.command == "moar":
        return harness.emit_figure_data("moar", spec, output, render=render)
    if args.command == "rates":
        return harness.emit_figure_data("rates", spec, output, render=render)
    if args.command == "se-check":
        return harness.emit_se_check(spec, output, render=render)
    return harness.emit_figure_data("ser", spec, output, render=render, long_format=args.format == "long")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        written = run_command(args)
    except harness.ConfigError as exc:
        print(f"mimoeq: configuration error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"mimoeq: configuration error: {exc}", file=sys.stderr)
        return 1
    except (amp_core.DivergenceError, analysis.ConvergenceError, linear_eq.RankDeficiencyError, RuntimeError) as exc:
        print(f"mimoeq: runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mimoeq: i/o error: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
