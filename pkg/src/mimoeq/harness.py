"""Experiment orchestration: seeded Monte Carlo sweeps, figure tables, CSV output.

A sweep is described by an `ExperimentSpec` (parsed from a key=value config
file or built by the CLI), runs as independent per-trial work units whose
randomness comes from `model.substream`, and lands in a `SweepResult` whose
CSV bytes are identical no matter how many workers executed the trials.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import amp_core, analysis, linear_eq, model

ALGORITHMS = ("mrc", "zf", "lmmse", "lmmse_mismatched", "mmse_amp", "nope", "robust_nope")
LINEAR_KINDS = ("mrc", "zf", "lmmse", "lmmse_mismatched")
SWEEP_VARIABLES = ("snr_db", "beta", "users")
FIGURE_KINDS = ("moar", "rates", "ser")

SWEEP_CSV_HEADER = ("sweep_value", "algorithm", "metric", "value", "trials", "stderr")


class ConfigError(ValueError):
    """Bad experiment configuration (file contents, flags, or combinations)."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved description of one CLI run."""

    base: model.SystemConfig
    sweep_variable: str = "snr_db"
    sweep_start: float = 0.0
    sweep_stop: float = 14.0
    sweep_step: float = 1.0
    algorithms: tuple = ("zf", "lmmse", "nope")
    trials: int = 1000
    gain_profile: model.GainProfile = model.UNIFORM_GAINS
    output: Path | None = None
    early_stop: bool = True
    workers: int = 1
    delta_snr_db: float = 1.0
    rate_start: float = 0.1
    rate_stop: float = 5.0
    rate_step: float = 0.1
    beta_override: float | None = None
    training_symbols: int | None = None

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.sweep_variable!r}")
        if self.sweep_start > self.sweep_stop:
            raise ConfigError("sweep_start must be <= sweep_stop")
        if self.sweep_step <= 0:
            raise ConfigError("sweep_step must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {algo!r}")
        if "lmmse_mismatched" in self.algorithms and self.base.mismatched_power is None:
            raise ConfigError("lmmse_mismatched requires es_prime")
        if self.gain_profile.kind == "explicit" and len(self.gain_profile.power_gains) != self.base.users:
            raise ConfigError("explicit gain profile must list one power gain per user")
        if self.beta_override is not None and self.beta_override <= 0:
            raise ConfigError("beta must be positive")
        if self.training_symbols is not None and self.training_symbols < 1:
            raise ConfigError("training_symbols must be >= 1")


@dataclass(frozen=True)
class SweepRow:
    sweep_value: float
    algorithm: str
    metric: str
    value: float
    trials: int
    stderr: float


@dataclass
class SweepResult:
    rows: list

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r.sweep_value, r.algorithm, r.metric))

    def to_csv_text(self) -> str:
        lines = [",".join(SWEEP_CSV_HEADER)]
        for row in self.sorted_rows():
            lines.append(
                ",".join(
                    (
                        _fmt(row.sweep_value),
                        row.algorithm,
                        row.metric,
                        _fmt(row.value),
                        str(row.trials),
                        _fmt(row.stderr),
                    )
                )
            )
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def sweep_points(spec: ExperimentSpec) -> list:
    """Grid start, start+step, ..., stop (inclusive up to float fuzz)."""
    count = int(math.floor((spec.sweep_stop - spec.sweep_start) / spec.sweep_step + 1e-9)) + 1
    points = [spec.sweep_start + k * spec.sweep_step for k in range(count)]
    if spec.sweep_variable == "users":
        points = [float(int(round(p))) for p in points]
    return points


def config_for_point(spec: ExperimentSpec, value: float) -> model.SystemConfig:
    """SystemConfig at one sweep point; Es stays fixed and N0 derives from SNR."""
    base = spec.base
    if spec.sweep_variable == "snr_db":
        return replace(base, noise_power=base.signal_power / analysis.db_to_linear(value))
    if spec.sweep_variable == "beta":
        users = max(1, int(round(value * base.bs_antennas)))
        return replace(base, users=users)
    return replace(base, users=max(1, int(round(value))))


def _feasible(algo: str, cfg: model.SystemConfig) -> bool:
    if algo == "zf":
        return cfg.users <= cfg.bs_antennas
    if algo in ("lmmse", "lmmse_mismatched"):
        return cfg.noise_power > 0 or cfg.users <= cfg.bs_antennas
    return True


def _chunk_ranges(trials: int, workers: int) -> list:
    # A few chunks per worker for balance; chunk boundaries do not affect output.
    n_chunks = min(trials, max(1, workers * 4)) if workers > 1 else 1
    size = math.ceil(trials / n_chunks)
    return [(lo, min(lo + size, trials)) for lo in range(0, trials, size)]


def _equalize_one(algo, cfg, channel, frame, gram_cache, early_stop):
    """Symbol-domain estimate of one algorithm on one frame (shared Gram cache)."""
    H, y = channel.H, frame.y
    if algo in ("zf", "lmmse", "lmmse_mismatched"):
        if "gram" not in gram_cache:
            gram_cache["gram"] = linear_eq.gram(H)
            gram_cache["mf"] = linear_eq.matched_filter(H, y)
        G, mf = gram_cache["gram"], gram_cache["mf"]
        if algo == "zf":
            return linear_eq.solve_regularized(G, mf, 0.0)
        es = cfg.mismatched_power if algo == "lmmse_mismatched" else cfg.signal_power
        if cfg.noise_power == 0.0:
            return linear_eq.solve_regularized(G, mf, 0.0)
        return linear_eq.solve_regularized(G, mf, cfg.noise_power / es)
    if algo == "mrc":
        return linear_eq.matched_filter(H, y)
    if algo == "mmse_amp":
        return amp_core.mmse_amp(H, y, cfg.signal_power, cfg.max_iterations, early_stop).symbol_estimate
    if algo == "nope":
        return amp_core.nope(H, y, cfg.max_iterations, early_stop).symbol_estimate
    if algo == "robust_nope":
        if channel.estimated_gains is None:
            channel = replace(channel, estimated_gains=model.estimate_gains(H))
        trace, _ = amp_core.robust_nope(channel, y, cfg.max_iterations, early_stop)
        return trace.symbol_estimate
    raise ConfigError(f"unknown algorithm {algo!r}")


def _ser_chunk(args):
    """Per-trial symbol error counts for trials [lo, hi) at one sweep point."""
    cfg, gain_profile, algos, early_stop, lo, hi = args
    counts = {algo: np.zeros(hi - lo, dtype=np.int64) for algo in algos}
    # Frame-sized matrices: multithreaded BLAS only adds contention here, the
    # parallelism comes from trial-level worker processes.
    with threadpool_limits(limits=1):
        for i, trial in enumerate(range(lo, hi)):
            channel, frame = model.generate_trial(cfg, trial, gain_profile)
            gram_cache = {}
            for algo in algos:
                x_hat = _equalize_one(algo, cfg, channel, frame, gram_cache, early_stop)
                detected = model.demap(x_hat, cfg.constellation, cfg.signal_power)
                counts[algo][i] = int(np.count_nonzero(detected != frame.x))
    return counts


def _run_chunked(spec, cfg, algos, chunk_fn):
    ranges = _chunk_ranges(spec.trials, spec.workers)
    args = [(cfg, spec.gain_profile, tuple(algos), spec.early_stop, lo, hi) for lo, hi in ranges]
    if spec.workers == 1:
        parts = [chunk_fn(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            parts = list(pool.map(chunk_fn, args))
    return {algo: np.concatenate([p[algo] for p in parts]) for algo in algos}


def run_ser_trials(spec: ExperimentSpec, point_value: float) -> dict:
    """Per-trial symbol error counts {algorithm: int array of length trials}
    at one sweep point. Infeasible algorithms are absent from the result."""
    cfg = config_for_point(spec, point_value)
    if cfg.constellation not in model.FINITE_CONSTELLATIONS:
        raise ConfigError("symbol error rates need a finite constellation (qpsk or bpsk)")
    active = [a for a in spec.algorithms if _feasible(a, cfg)]
    if not active:
        return {}
    return _run_chunked(spec, cfg, active, _ser_chunk)


def run_ser_sweep(spec: ExperimentSpec) -> SweepResult:
    """Paired Monte Carlo symbol-error-rate sweep.

    All algorithms at a given (point, trial) consume the identical channel,
    symbols, and noise. Infeasible combinations (e.g. ZF with more users than
    antennas) produce a NaN row instead of failing the run.
    """
    rows = []
    for point in sweep_points(spec):
        cfg = config_for_point(spec, point)
        errors = run_ser_trials(spec, point)
        symbols = cfg.users * spec.trials
        for algo in spec.algorithms:
            if algo not in errors:
                rows.append(SweepRow(point, algo, "ser", math.nan, 0, math.nan))
                continue
            p_hat = float(errors[algo].sum()) / symbols
            stderr = math.sqrt(p_hat * (1.0 - p_hat) / symbols)
            rows.append(SweepRow(point, algo, "ser", p_hat, spec.trials, stderr))
    return SweepResult(rows=rows)


def _sir_chunk(args):
    """Per-trial statistics for trials [lo, hi) at one sweep point.

    Linear equalizers: per-trial mean of the deterministic per-user SINR.
    AMP-family equalizers: per-trial mean-squared error of the effective
    observation (pooled into one SIR later; averaging per-trial 1/MSE values
    would be heavy-tailed for small U).
    """
    cfg, gain_profile, algos, early_stop, lo, hi = args
    values = {algo: np.zeros(hi - lo) for algo in algos}
    Es, N0, T = cfg.signal_power, cfg.noise_power, cfg.max_iterations
    with threadpool_limits(limits=1):
        for i, trial in enumerate(range(lo, hi)):
            channel, frame = model.generate_trial(cfg, trial, gain_profile)
            H, y, x = channel.H, frame.y, frame.x
            for algo in algos:
                if algo in LINEAR_KINDS:
                    W = linear_eq.equalizer_matrix(H, algo, Es, N0, cfg.mismatched_power)
                    values[algo][i] = float(np.mean(linear_eq.output_sinr(W, H, Es, N0)))
                else:
                    if algo == "mmse_amp":
                        trace = amp_core.mmse_amp(H, y, Es, T, early_stop)
                    else:
                        trace = amp_core.nope(H, y, T, early_stop)
                    z = trace.records[-1].z
                    values[algo][i] = float(np.mean(np.abs(z - x) ** 2))
    return values


def _analytic_sir(algo: str, cfg: model.SystemConfig) -> float:
    beta = cfg.antenna_ratio
    Es, N0 = cfg.signal_power, cfg.noise_power
    if algo == "lmmse_mismatched":
        state = analysis.mismatched_se_fixed_point(beta, Es, cfg.mismatched_power, N0)
        return Es / state.sigma_sq
    if algo in ("lmmse", "mmse_amp", "nope"):
        return Es / analysis.se_fixed_point(beta, Es, N0)
    if algo == "mrc":
        return Es / analysis.generic_fixed_point("mrc", beta, Es, N0)
    if algo == "zf":
        return Es / analysis.generic_fixed_point("zf", beta, Es, N0)
    raise analysis.InfeasibleError(f"no analytic SIR prediction for {algo!r}")


def run_se_comparison(spec: ExperimentSpec) -> SweepResult:
    """Empirical output SIR next to its large-system prediction, per point.

    Requires the gaussian constellation so the equalizers' Gaussian signal
    model is matched. Emits paired rows: metric empirical_sir_db from the
    Monte Carlo runs and analytic_sir_db from the fixed-point analysis.
    """
    if spec.base.constellation != "gaussian":
        raise ConfigError("se comparison requires constellation=gaussian")
    rows = []
    for point in sweep_points(spec):
        cfg = config_for_point(spec, point)
        active = []
        predictions = {}
        for algo in spec.algorithms:
            try:
                predictions[algo] = _analytic_sir(algo, cfg)
            except analysis.InfeasibleError:
                continue
            if _feasible(algo, cfg):
                active.append(algo)
        values = _run_chunked(spec, cfg, active, _sir_chunk) if active else {}
        for algo in spec.algorithms:
            if algo not in values:
                rows.append(SweepRow(point, algo, "empirical_sir_db", math.nan, 0, math.nan))
                rows.append(SweepRow(point, algo, "analytic_sir_db", math.nan, 0, math.nan))
                continue
            sample = values[algo]
            mean = float(sample.mean())
            if algo in LINEAR_KINDS:
                sir = mean
            else:
                sir = cfg.signal_power / mean  # pooled-MSE estimator
            if spec.trials > 1:
                rel_err = float(sample.std(ddof=1)) / (mean * math.sqrt(spec.trials))
                stderr_db = 10.0 / math.log(10.0) * rel_err
            else:
                stderr_db = 0.0
            rows.append(
                SweepRow(point, algo, "empirical_sir_db", analysis.linear_to_db(sir), spec.trials, stderr_db)
            )
            rows.append(
                SweepRow(point, algo, "analytic_sir_db", analysis.linear_to_db(predictions[algo]), 0, 0.0)
            )
    return SweepResult(rows=rows)


def _rate_grid(spec: ExperimentSpec) -> list:
    count = int(math.floor((spec.rate_stop - spec.rate_start) / spec.rate_step + 1e-9)) + 1
    return [spec.rate_start + k * spec.rate_step for k in range(count)]


def moar_table(spec: ExperimentSpec) -> tuple:
    header = ("rate_bits", "beta_max_mrc", "beta_max_zf", "beta_max_lmmse")
    rows = analysis.moar_curve(analysis.db_to_linear(spec.delta_snr_db), _rate_grid(spec))
    return header, rows


def rates_table(spec: ExperimentSpec) -> tuple:
    if spec.sweep_variable != "snr_db":
        raise ConfigError("the rates figure sweeps snr_db")
    beta = spec.beta_override if spec.beta_override is not None else spec.base.antenna_ratio
    training = spec.training_symbols if spec.training_symbols is not None else 2 * spec.base.users
    header = (
        "snr_db",
        "rate_mrc",
        "rate_zf",
        "rate_lmmse",
        "rate_awgn",
        "rate_mismatched_over",
        "rate_mismatched_under",
    )
    rows = analysis.rate_curve(beta, sweep_points(spec), spec.base.signal_power, training)
    return header, rows


def ser_table(spec: ExperimentSpec) -> tuple:
    """Wide symbol-error-rate table: one column per algorithm plus, for QPSK
    SNR sweeps, the analytic single-user AWGN lower bound."""
    result = run_ser_sweep(spec)
    by_point = {}
    for row in result.rows:
        by_point.setdefault(row.sweep_value, {})[row.algorithm] = row.value
    ordered_algos = [a for a in ALGORITHMS if a in spec.algorithms]
    with_bound = spec.base.constellation == "qpsk"
    header = [spec.sweep_variable] + [f"ser_{a}" for a in ordered_algos]
    if with_bound:
        header.append("ser_awgn_bound")
    rows = []
    for point in sweep_points(spec):
        cfg = config_for_point(spec, point)
        row = {spec.sweep_variable: point}
        for algo in ordered_algos:
            row[f"ser_{algo}"] = by_point[point][algo]
        if with_bound:
            row["ser_awgn_bound"] = analysis.awgn_ser_qpsk(cfg.signal_power, cfg.noise_power)
        rows.append(row)
    return tuple(header), rows


def table_csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in header))
    return "\n".join(lines) + "\n"


def write_text(path: Path, text: str) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def spec_as_manifest(spec: ExperimentSpec) -> dict:
    payload = asdict(spec)
    payload["output"] = str(spec.output) if spec.output is not None else None
    return payload


def write_manifest(output_path: Path, command: str, spec: ExperimentSpec, outputs: list) -> Path:
    from . import __version__

    path = Path(output_path).with_suffix(".manifest.json")
    payload = {
        "command": command,
        "package": "mimoeq",
        "version": __version__,
        "parameters": spec_as_manifest(spec),
        "outputs": [str(p) for p in outputs],
    }
    write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def emit_figure_data(
    figure: str,
    spec: ExperimentSpec,
    output_path,
    render: bool = True,
    long_format: bool = False,
) -> list:
    """Write the CSV (plus rendered figure and run manifest) for one figure kind.

    Returns the list of written paths. `long_format` switches the ser output
    to the long sweep-row schema instead of the wide per-algorithm columns.
    """
    if figure not in FIGURE_KINDS:
        raise ConfigError(f"unknown figure kind {figure!r}")
    output_path = Path(output_path)
    if figure == "moar":
        header, rows = moar_table(spec)
        text = table_csv_text(header, rows)
    elif figure == "rates":
        header, rows = rates_table(spec)
        text = table_csv_text(header, rows)
    elif long_format:
        result = run_ser_sweep(spec)
        header, rows = None, None
        text = result.to_csv_text()
    else:
        header, rows = ser_table(spec)
        text = table_csv_text(header, rows)
    write_text(output_path, text)
    outputs = [output_path]
    if render:
        from . import plotting

        figure_path = output_path.with_suffix(".png")
        if header is None:
            plotting.render_sweep(SWEEP_CSV_HEADER, _csv_rows(text), figure_path)
        else:
            plotting.render_table(figure, header, rows, figure_path)
        outputs.append(figure_path)
    outputs.append(write_manifest(output_path, figure, spec, outputs))
    return outputs


def emit_se_check(spec: ExperimentSpec, output_path, render: bool = True) -> list:
    """Write the long-format empirical-vs-analytic SIR CSV (plus figure, manifest)."""
    output_path = Path(output_path)
    result = run_se_comparison(spec)
    text = result.to_csv_text()
    write_text(output_path, text)
    outputs = [output_path]
    if render:
        from . import plotting

        figure_path = output_path.with_suffix(".png")
        plotting.render_sweep(SWEEP_CSV_HEADER, _csv_rows(text), figure_path)
        outputs.append(figure_path)
    outputs.append(write_manifest(output_path, "se-check", spec, outputs))
    return outputs


def _csv_rows(text: str) -> list:
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


# --- config file parsing ----------------------------------------------------

def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError("expected true or false")


def _parse_algorithms(raw: str) -> tuple:
    algos = tuple(part.strip() for part in raw.split(",") if part.strip())
    if not algos:
        raise ValueError("empty algorithm list")
    for algo in algos:
        if algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algo!r} (known: {', '.join(ALGORITHMS)})")
    return algos


def _parse_gain_profile(raw: str) -> model.GainProfile:
    if raw == "uniform":
        return model.UNIFORM_GAINS
    kind, _, payload = raw.partition(":")
    values = tuple(float(part) for part in payload.split(",") if part.strip())
    if kind == "loguniform":
        if len(values) != 2:
            raise ValueError("loguniform profile needs exactly two bounds: loguniform:lo,hi")
        return model.GainProfile(kind="loguniform", power_bounds=values)
    if kind == "explicit":
        return model.GainProfile(kind="explicit", power_gains=values)
    raise ValueError(f"unknown gain profile {raw!r}")


def _parse_choice(options):
    def parse(raw):
        if raw not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return raw

    return parse


_REQUIRED_KEYS = (
    "bs_antennas",
    "users",
    "trials",
    "seed",
    "algorithms",
    "sweep_start",
    "sweep_stop",
    "sweep_step",
)

_CONFIG_PARSERS = {
    "bs_antennas": int,
    "users": int,
    "trials": int,
    "seed": int,
    "iterations": int,
    "workers": int,
    "training_symbols": int,
    "sweep_start": float,
    "sweep_stop": float,
    "sweep_step": float,
    "es": float,
    "snr_db": float,
    "es_prime": float,
    "delta_snr_db": float,
    "rate_start": float,
    "rate_stop": float,
    "rate_step": float,
    "beta": float,
    "sweep": _parse_choice(SWEEP_VARIABLES),
    "constellation": _parse_choice(model.CONSTELLATIONS),
    "algorithms": _parse_algorithms,
    "gain_profile": _parse_gain_profile,
    "early_stop": _parse_bool,
    "output": str,
}


def load_spec(path, default_constellation: str = "qpsk") -> ExperimentSpec:
    """Parse a key=value experiment config (one key per line, `#` comments).

    Unknown keys, malformed values, and missing required keys are hard errors
    reported with their line number. Values for keys named `*_db` are in dB;
    everything else is linear scale.
    """
    path = Path(path)
    try:
        raw_text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, raw_line in enumerate(raw_text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw_line.strip()!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](raw_value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    missing = [key for key in _REQUIRED_KEYS if key not in values]
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")
    return build_spec(values, default_constellation=default_constellation)


def build_spec(values: dict, default_constellation: str = "qpsk") -> ExperimentSpec:
    """Assemble an ExperimentSpec from a parsed key -> value mapping."""
    es = values.get("es", 1.0)
    snr_db = values.get("snr_db", 10.0)
    try:
        base = model.SystemConfig(
            bs_antennas=values["bs_antennas"],
            users=values["users"],
            signal_power=es,
            noise_power=es / analysis.db_to_linear(snr_db),
            mismatched_power=values.get("es_prime"),
            constellation=values.get("constellation", default_constellation),
            max_iterations=values.get("iterations", 20),
            master_seed=values["seed"],
        )
        return ExperimentSpec(
            base=base,
            sweep_variable=values.get("sweep", "snr_db"),
            sweep_start=values["sweep_start"],
            sweep_stop=values["sweep_stop"],
            sweep_step=values["sweep_step"],
            algorithms=values["algorithms"],
            trials=values["trials"],
            gain_profile=values.get("gain_profile", model.UNIFORM_GAINS),
            output=Path(values["output"]) if values.get("output") else None,
            early_stop=values.get("early_stop", True),
            workers=values.get("workers", 1),
            delta_snr_db=values.get("delta_snr_db", 1.0),
            rate_start=values.get("rate_start", 0.1),
            rate_stop=values.get("rate_stop", 5.0),
            rate_step=values.get("rate_step", 0.1),
            beta_override=values.get("beta"),
            training_symbols=values.get("training_symbols"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
