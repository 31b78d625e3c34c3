"""Iterative equalizers built on approximate message passing.

Three variants share the same matched-filter / shrink / Onsager-corrected
residual recursion:

* `mmse_amp`    - parametric: knows the signal power Es and shrinks with the
                  conditional-mean factor Es / (Es + tau), tau tuned per
                  iteration by minimizing the closed-form MSE `psi_mse`.
* `nope`        - nonparametric: estimates the single shrinkage parameter
                  gamma = Es / tau per iteration from the data alone, via the
                  unbiased risk estimate `sure_estimate`; consumes no Es, N0,
                  or prior knowledge anywhere.
* `robust_nope` - nonparametric with per-user channel gains: estimates each
                  user's gain from the channel columns and the common signal
                  power from the iterate itself (`estimate_signal_power`).

Each run returns an `AmpTrace` holding the per-iteration state, which the
tests use to check the residual bookkeeping and state-evolution tracking.
"""

from dataclasses import dataclass

import numpy as np

from .model import ChannelRealization

_DIVERGENCE_GROWTH = 1e6
_EARLY_STOP_RTOL = 1e-8
_SIGNAL_POWER_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """An iterate became nonfinite or the residual energy blew up."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class DegenerateResidualError(ValueError):
    """Zero residual energy: the tuning rule is undefined (treat as converged)."""


@dataclass(eq=False)
class IterationRecord:
    """State of one iteration t: inputs r (with sigma_tilde_sq = ||r||^2 / B),
    the effective observation z, the produced update x = x^{t+1}, and the
    tuning value (tau for mmse_amp, gamma for nope, Es-hat for robust_nope)."""

    x: np.ndarray
    z: np.ndarray
    r: np.ndarray
    sigma_tilde_sq: float
    tuning: float
    gamma_clamped: bool = False


@dataclass(eq=False)
class AmpTrace:
    """Record of one run. final_estimate is the last iterate x^{T+1};
    symbol_estimate is the same vector mapped to the symbol domain (identical
    except for robust_nope, whose internal iterate carries a d_hat^2 scaling)."""

    records: list
    final_estimate: np.ndarray
    symbol_estimate: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class RobustEstimates:
    """Per-iteration parameter estimates of robust_nope: the signal power and
    the effective noise variance tau_hat = ||r||^2 / B."""

    es_hat: float
    tau_hat: float


def psi_mse(sigma_sq: float, tau: float, Es: float) -> float:
    """MSE of the shrinker z -> Es/(Es+tau) z on z = x + CN(0, sigma_sq), x ~ CN(0, Es):

        psi = (tau^2 Es + sigma_sq Es^2) / (Es + tau)^2
    """
    if sigma_sq < 0 or tau < 0:
        raise ValueError("sigma_sq and tau must be nonnegative")
    if Es <= 0:
        raise ValueError("Es must be positive")
    return (tau**2 * Es + sigma_sq * Es**2) / (Es + tau) ** 2


def optimal_tau(sigma_sq: float, Es: float) -> float:
    """Minimizer of psi_mse over tau >= 0.

    d(psi)/d(tau) = 2 Es^2 (tau - sigma_sq) / (Es + tau)^3, so the unique
    stationary point is tau = sigma_sq, independent of Es. The grid-search
    oracle in the test suite confirms this closed form.
    """
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be nonnegative")
    if Es <= 0:
        raise ValueError("Es must be positive")
    return sigma_sq


def sure_estimate(sigma_sq: float, gamma: float, z: np.ndarray) -> float:
    """Unbiased risk estimate of the shrinker z -> gamma/(gamma+1) z:

        psi_hat = sigma_sq (gamma - 1)/(gamma + 1) + ||z||^2 / (U (gamma + 1)^2)

    Computed from the data z alone; may be negative.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    z = np.asarray(z)
    if z.size == 0:
        raise ValueError("z must be nonempty")
    zss = float(np.vdot(z, z).real)
    return sigma_sq * (gamma - 1.0) / (gamma + 1.0) + zss / (z.size * (gamma + 1.0) ** 2)


def gamma_min(z: np.ndarray, sigma_sq: float) -> tuple[float, bool]:
    """Minimizer of `sure_estimate` over gamma >= 0: ||z||^2 / (U sigma_sq) - 1.

    The raw minimizer can be negative early on at low SNR; it is clamped to 0
    (the shrinker then zeroes the iterate) and the clamp is flagged.
    """
    z = np.asarray(z)
    if z.size == 0:
        raise ValueError("z must be nonempty")
    if sigma_sq <= 0:
        raise DegenerateResidualError("sigma_sq must be positive to tune gamma")
    raw = float(np.vdot(z, z).real) / (z.size * sigma_sq) - 1.0
    if raw < 0:
        return 0.0, True
    return raw, False


def estimate_signal_power(z: np.ndarray, d_hat: np.ndarray, beta: float, residual_norm_sq: float) -> float:
    """Signal-power estimate from the effective observation of a gain-scaled run:

        Es_hat = (||diag(d_hat)^-1 z||^2 - beta ||r||^2) / sum_l d_hat_l^2

    Valid in the large-system regime where z_l decouples as
    d_l^2 x_l + d_l w_l; can go nonpositive in small systems (callers floor it).
    """
    z = np.asarray(z)
    d_hat = np.asarray(d_hat, dtype=float)
    scaled = z / d_hat
    num = float(np.vdot(scaled, scaled).real) - beta * residual_norm_sq
    return num / float(np.sum(d_hat**2))


def _check_run_args(H, y, num_iterations):
    H = np.asarray(H)
    y = np.asarray(y, dtype=complex)
    if H.ndim != 2 or y.shape != (H.shape[0],):
        raise ValueError(f"incompatible shapes H{H.shape}, y{y.shape}")
    if num_iterations < 1:
        raise ValueError("num_iterations must be >= 1")
    return H, y


def _residual_energy(r, iteration, first_energy):
    rss = float(np.vdot(r, r).real)
    if not np.isfinite(rss):
        raise DivergenceError(iteration, "residual energy is not finite")
    if first_energy is not None and first_energy > 0 and rss > _DIVERGENCE_GROWTH * first_energy:
        raise DivergenceError(iteration, f"residual energy grew past {_DIVERGENCE_GROWTH:g}x its start")
    return rss


def _check_finite(x_next, r_next, iteration):
    if not (np.all(np.isfinite(x_next.view(float))) and np.all(np.isfinite(r_next.view(float)))):
        raise DivergenceError(iteration, "nonfinite iterate")


def _small_move(x_next, x):
    base = max(float(np.linalg.norm(x)), 1e-12)
    return float(np.linalg.norm(x_next - x)) <= _EARLY_STOP_RTOL * base


def mmse_amp(H: np.ndarray, y: np.ndarray, Es: float, num_iterations: int, early_stop: bool = True) -> AmpTrace:
    """Parametric AMP equalizer with a Gaussian CN(0, Es) signal prior.

    Per iteration t (x^1 = 0, r^1 = y - H x^1):

        sigma_tilde^2 = ||r||^2 / B
        tau           = optimal_tau(sigma_tilde^2, Es)
        z             = x + H^H r
        x_next        = Es/(Es + tau) * z
        r_next        = y - H x_next + beta * Es/(Es + tau) * r

    Stops early on an exact fit (||r|| = 0) or, if early_stop, when the
    iterate moves by less than 1e-8 relative.
    """
    H, y = _check_run_args(H, y, num_iterations)
    if Es <= 0:
        raise ValueError("Es must be positive")
    B, U = H.shape
    beta = U / B
    Hh = H.conj().T
    x = np.zeros(U, dtype=complex)
    r = y.copy()
    records = []
    first_energy = None
    for t in range(1, num_iterations + 1):
        rss = _residual_energy(r, t, first_energy)
        if first_energy is None:
            first_energy = rss
        if rss == 0.0:
            break
        sigma_sq = rss / B
        tau = optimal_tau(sigma_sq, Es)
        z = x + Hh @ r
        shrink = Es / (Es + tau)
        x_next = shrink * z
        r_next = y - H @ x_next + (beta * shrink) * r
        _check_finite(x_next, r_next, t)
        records.append(IterationRecord(x=x_next, z=z, r=r, sigma_tilde_sq=sigma_sq, tuning=tau))
        stop = early_stop and _small_move(x_next, x)
        x, r = x_next, r_next
        if stop:
            break
    return AmpTrace(records=records, final_estimate=x, symbol_estimate=x)


def nope(H: np.ndarray, y: np.ndarray, num_iterations: int, early_stop: bool = True) -> AmpTrace:
    """Nonparametric equalizer: AMP with the shrinkage parameter tuned by SURE.

    Per iteration t (x^1 = 0, r^1 = y):

        z      = x + H^H r
        gamma  = (1/beta) ||z||^2 / ||r||^2 - 1   (= gamma_min(z, ||r||^2/B), clamped at 0)
        x_next = gamma/(gamma+1) * z
        r_next = y - H x_next + beta * gamma/(gamma+1) * r

    No signal power, noise power, or prior knowledge is consumed anywhere.
    """
    H, y = _check_run_args(H, y, num_iterations)
    B, U = H.shape
    beta = U / B
    Hh = H.conj().T
    x = np.zeros(U, dtype=complex)
    r = y.copy()
    records = []
    first_energy = None
    for t in range(1, num_iterations + 1):
        rss = _residual_energy(r, t, first_energy)
        if first_energy is None:
            first_energy = rss
        if rss == 0.0:
            break
        sigma_sq = rss / B
        z = x + Hh @ r
        gamma, clamped = gamma_min(z, sigma_sq)
        shrink = gamma / (gamma + 1.0)
        x_next = shrink * z
        r_next = y - H @ x_next + (beta * shrink) * r
        _check_finite(x_next, r_next, t)
        records.append(
            IterationRecord(x=x_next, z=z, r=r, sigma_tilde_sq=sigma_sq, tuning=gamma, gamma_clamped=clamped)
        )
        stop = early_stop and _small_move(x_next, x)
        x, r = x_next, r_next
        if stop:
            break
    return AmpTrace(records=records, final_estimate=x, symbol_estimate=x)


def robust_nope(
    channel: ChannelRealization,
    y: np.ndarray,
    num_iterations: int,
    early_stop: bool = True,
) -> tuple[AmpTrace, list]:
    """Nonparametric equalizer for channels with per-user gains H = H_uniform diag(d).

    Uses the gain estimates d_hat from the channel columns. Per iteration:

        z       = x + H^H r
        tau_hat = ||r||^2 / B
        Es_hat  = estimate_signal_power(z, d_hat, beta, ||r||^2), floored at
                  1e-12 tau_hat so the shrinker always contracts
        x_next_l = Es_hat / (Es_hat + tau_hat / d_hat_l^2) * z_l
        r_next   = y - H diag(d_hat)^-2 x_next + beta * r * mean_l(shrink_l)

    The internal iterate estimates d_hat_l^2 x_l; the returned trace's
    symbol_estimate is divided by d_hat^2 to land in the symbol domain.
    Returns (trace, per-iteration RobustEstimates).
    """
    d_hat = channel.estimated_gains
    if d_hat is None:
        raise ValueError("channel must carry estimated_gains (see estimate_gains)")
    d_hat = np.asarray(d_hat, dtype=float)
    if np.any(d_hat <= 0):
        raise ValueError("all estimated gains must be positive")
    H, y = _check_run_args(channel.H, y, num_iterations)
    B, U = H.shape
    if d_hat.shape != (U,):
        raise ValueError(f"estimated_gains must have shape ({U},)")
    beta = U / B
    Hh = H.conj().T
    inv_d2 = 1.0 / d_hat**2
    x = np.zeros(U, dtype=complex)
    r = y.copy()
    records = []
    estimates = []
    first_energy = None
    for t in range(1, num_iterations + 1):
        rss = _residual_energy(r, t, first_energy)
        if first_energy is None:
            first_energy = rss
        if rss == 0.0:
            break
        tau_hat = rss / B
        z = x + Hh @ r
        es_raw = estimate_signal_power(z, d_hat, beta, rss)
        floor = _SIGNAL_POWER_FLOOR * tau_hat
        floored = es_raw < floor
        es_hat = floor if floored else es_raw
        shrink = es_hat / (es_hat + tau_hat * inv_d2)
        x_next = shrink * z
        r_next = y - H @ (inv_d2 * x_next) + (beta * float(shrink.mean())) * r
        _check_finite(x_next, r_next, t)
        records.append(
            IterationRecord(x=x_next, z=z, r=r, sigma_tilde_sq=tau_hat, tuning=es_hat, gamma_clamped=floored)
        )
        estimates.append(RobustEstimates(es_hat=es_hat, tau_hat=tau_hat))
        stop = early_stop and _small_move(x_next, x)
        x, r = x_next, r_next
        if stop:
            break
    return AmpTrace(records=records, final_estimate=x, symbol_estimate=x * inv_d2), estimates


def dump_trace_csv(trace: AmpTrace, path, truth: np.ndarray | None = None) -> None:
    """Write one CSV row per iteration: index, sigma_tilde_sq, tuning value,
    and (when the true symbols are known) the MSE of that iteration's update."""
    lines = ["iteration,sigma_tilde_sq,tuning_value,mse_vs_truth_if_known"]
    for t, rec in enumerate(trace.records, start=1):
        if truth is not None:
            mse = float(np.mean(np.abs(rec.x - truth) ** 2))
            mse_text = f"{mse:.17g}"
        else:
            mse_text = ""
        lines.append(f"{t},{rec.sigma_tilde_sq:.17g},{rec.tuning:.17g},{mse_text}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
