"""Closed-form performance machinery for the large-antenna limit.

State evolution tracks the effective noise variance sigma^2 of the decoupled
per-user channel z = x + CN(0, sigma^2) that the AMP-family equalizers
realize; its fixed point also gives the asymptotic SINR of the exact linear
equalizers. On top of that sit the per-user achievable rate, the SNR loss of
a linear equalizer against the optimal-detector AWGN bound, and the maximum
antenna ratio that keeps that loss below a target.

Conventions: rates in bits/user/channel-use, SIR reported as Es / sigma^2,
dB values are 10 log10 of the linear quantity.
"""

import math
from dataclasses import dataclass

from scipy.special import erfc
from scipy.stats import chi2

LINEAR_EQUALIZERS = ("mrc", "zf", "lmmse")

_ABS_FLOOR = 1e-30


class ConvergenceError(RuntimeError):
    """A fixed-point iteration exhausted its iteration budget."""


class InfeasibleError(ValueError):
    """No finite fixed point / the equalizer cannot reach the requested rate."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    if value <= 0:
        raise ValueError("dB undefined for nonpositive values")
    return 10.0 * math.log10(value)


@dataclass(frozen=True)
class SeState:
    """Coupled state of the mismatched evolution: sigma_sq is the true
    effective noise variance, theta_sq the variance the mismatched estimator
    tracks. They coincide when the assumed signal power is correct."""

    sigma_sq: float
    theta_sq: float


def se_step(sigma_sq: float, beta: float, Es: float, N0: float) -> float:
    """One state-evolution step: N0 + beta * Es * sigma^2 / (Es + sigma^2)."""
    if sigma_sq < 0 or beta < 0 or N0 < 0:
        raise ValueError("sigma_sq, beta, N0 must be nonnegative")
    if Es <= 0:
        raise ValueError("Es must be positive")
    return N0 + beta * Es * sigma_sq / (Es + sigma_sq)


def se_trajectory(beta: float, Es: float, N0: float, num_steps: int) -> list:
    """[sigma_0^2, ..., sigma_num_steps^2] starting from sigma_0^2 = N0 + beta Es.

    The start matches the first residual of the AMP equalizers (x^1 = 0, so
    ||y||^2 / B -> N0 + beta Es), which makes iterate-level comparisons
    against empirical runs line up: iteration t sees variance sigma_{t-1}^2.
    """
    values = [N0 + beta * Es]
    for _ in range(num_steps):
        values.append(se_step(values[-1], beta, Es, N0))
    return values


def se_fixed_point(beta: float, Es: float, N0: float, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Fixed point of `se_step`, iterated from N0 + beta Es to relative tol.

    Equals the positive root of sigma^4 + (Es - beta Es - N0) sigma^2 - N0 Es = 0;
    the test suite checks against that quadratic independently.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = N0 + beta * Es
    for _ in range(max_iter):
        nxt = se_step(state, beta, Es, N0)
        if abs(nxt - state) <= tol * nxt + _ABS_FLOOR:
            return nxt
        state = nxt
    raise ConvergenceError(f"state evolution did not converge in {max_iter} iterations")


def mismatched_se_step(state: SeState, beta: float, Es: float, Es_prime: float, N0: float) -> SeState:
    """One step of the coupled evolution under an assumed signal power Es_prime:

        sigma^2 <- N0 + beta (theta^4 Es + Es'^2 sigma^2) / (Es' + theta^2)^2
        theta^2 <- N0 + beta Es' theta^2 / (Es' + theta^2)

    Both components update simultaneously from the prior state.
    """
    if Es <= 0 or Es_prime <= 0:
        raise ValueError("Es and Es_prime must be positive")
    if beta < 0 or N0 < 0:
        raise ValueError("beta and N0 must be nonnegative")
    sg, th = state.sigma_sq, state.theta_sq
    denom = (Es_prime + th) ** 2
    return SeState(
        sigma_sq=N0 + beta * (th**2 * Es + Es_prime**2 * sg) / denom,
        theta_sq=N0 + beta * Es_prime * th / (Es_prime + th),
    )


def mismatched_se_fixed_point(
    beta: float,
    Es: float,
    Es_prime: float,
    N0: float,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> SeState:
    """Fixed point of `mismatched_se_step`, both components started at N0 + beta Es."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = SeState(sigma_sq=N0 + beta * Es, theta_sq=N0 + beta * Es)
    for _ in range(max_iter):
        nxt = mismatched_se_step(state, beta, Es, Es_prime, N0)
        if (
            abs(nxt.sigma_sq - state.sigma_sq) <= tol * nxt.sigma_sq + _ABS_FLOOR
            and abs(nxt.theta_sq - state.theta_sq) <= tol * nxt.theta_sq + _ABS_FLOOR
        ):
            return nxt
        state = nxt
    raise ConvergenceError(f"coupled state evolution did not converge in {max_iter} iterations")


def _psi_fixed_point_kernel(equalizer: str, sigma_sq: float, Es: float) -> float:
    # Per-user MSE entering the fixed-point equation sigma^2 = N0_hat + beta * psi.
    if equalizer == "mrc":
        return Es
    if equalizer == "zf":
        return sigma_sq
    if equalizer == "lmmse":
        return Es * sigma_sq / (Es + sigma_sq)
    raise ValueError(f"unknown equalizer {equalizer!r}; expected one of {LINEAR_EQUALIZERS}")


def generic_fixed_point(equalizer: str, beta: float, Es: float, N0_hat: float) -> float:
    """Large-system effective noise variance of MRC, ZF, or L-MMSE.

    MRC and ZF have closed forms N0_hat + beta Es and N0_hat / (1 - beta);
    L-MMSE comes from `se_fixed_point`. ZF has no finite fixed point at
    beta >= 1.
    """
    if beta < 0 or N0_hat < 0:
        raise ValueError("beta and N0_hat must be nonnegative")
    if Es <= 0:
        raise ValueError("Es must be positive")
    if equalizer == "mrc":
        return N0_hat + beta * Es
    if equalizer == "zf":
        if beta >= 1:
            raise InfeasibleError("zero forcing has no finite fixed point for beta >= 1")
        return N0_hat / (1.0 - beta)
    if equalizer == "lmmse":
        return se_fixed_point(beta, Es, N0_hat)
    raise ValueError(f"unknown equalizer {equalizer!r}; expected one of {LINEAR_EQUALIZERS}")


def achievable_rate(Es: float, sigma_sq: float) -> float:
    """Per-user rate of the decoupled channel: log2(1 + Es / sigma^2)."""
    if Es <= 0:
        raise ValueError("Es must be positive")
    if sigma_sq <= 0:
        raise ValueError("rate is unbounded at zero effective noise variance")
    return math.log2(1.0 + Es / sigma_sq)


def awgn_rate(Es: float, N0: float) -> float:
    """Single-user AWGN capacity log2(1 + Es / N0), the optimal-detector bound."""
    return achievable_rate(Es, N0)


def moar(equalizer: str, delta_snr: float, rate: float) -> float:
    """Largest antenna ratio keeping `equalizer` within SNR loss delta_snr at `rate`.

        MRC:    (1 - 1/delta_snr) / (2^R - 1)
        ZF:      1 - 1/delta_snr
        L-MMSE: (1 - 1/delta_snr) * 2^R / (2^R - 1)

    delta_snr is linear scale and must be >= 1.
    """
    if delta_snr < 1:
        raise ValueError("delta_snr must be >= 1 (no negative loss)")
    if rate <= 0:
        raise ValueError("rate must be positive")
    loss_fraction = 1.0 - 1.0 / delta_snr
    gain = 2.0**rate
    if equalizer == "mrc":
        return loss_fraction / (gain - 1.0)
    if equalizer == "zf":
        return loss_fraction
    if equalizer == "lmmse":
        return loss_fraction * gain / (gain - 1.0)
    raise ValueError(f"unknown equalizer {equalizer!r}; expected one of {LINEAR_EQUALIZERS}")


def snr_loss(equalizer: str, beta: float, rate: float, Es: float = 1.0) -> float:
    """Excess SNR (linear, >= 1) the equalizer needs over the AWGN bound at `rate`:

        delta = (1 - beta * psi(Es / (2^R - 1)) * (2^R - 1) / Es)^-1

    with psi the equalizer's fixed-point MSE kernel. Inverse of `moar` in beta.
    Raises InfeasibleError when the equalizer cannot reach the rate at any SNR.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if rate <= 0:
        raise ValueError("rate must be positive")
    if Es <= 0:
        raise ValueError("Es must be positive")
    sigma_sq = Es / (2.0**rate - 1.0)
    denom = 1.0 - beta * _psi_fixed_point_kernel(equalizer, sigma_sq, Es) * (2.0**rate - 1.0) / Es
    if denom <= 0:
        raise InfeasibleError(f"{equalizer} cannot achieve rate {rate} at antenna ratio {beta}")
    return 1.0 / denom


def awgn_ser_qpsk(Es: float, N0: float) -> float:
    """QPSK symbol error rate on a single AWGN channel with CN(0, N0) noise:

        SER = 1 - (1 - Q(sqrt(Es/N0)))^2 = 2 q - q^2

    evaluated in the expanded form, which does not cancel in the deep tail.
    """
    if Es <= 0:
        raise ValueError("Es must be positive")
    if N0 <= 0:
        raise ValueError("N0 must be positive")
    q = 0.5 * erfc(math.sqrt(Es / N0 / 2.0))
    return 2.0 * q - q * q


def power_estimate_percentile(Es: float, num_samples: int, percentile: float) -> float:
    """Percentile of the mean-power estimator (1/n) sum |x_i|^2 over n Gaussian symbols.

    The estimator is distributed Es * chi2(2n) / (2n).
    """
    if Es <= 0:
        raise ValueError("Es must be positive")
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if not 0 < percentile < 1:
        raise ValueError("percentile must be in (0, 1)")
    dof = 2 * num_samples
    return Es * float(chi2.ppf(percentile, dof)) / dof


def moar_curve(delta_snr: float, rates) -> list:
    """Rows of (rate_bits, beta_max_mrc, beta_max_zf, beta_max_lmmse)."""
    rows = []
    for rate in rates:
        rows.append(
            {
                "rate_bits": float(rate),
                "beta_max_mrc": moar("mrc", delta_snr, rate),
                "beta_max_zf": moar("zf", delta_snr, rate),
                "beta_max_lmmse": moar("lmmse", delta_snr, rate),
            }
        )
    return rows


def rate_curve(beta: float, snr_db_values, Es: float = 1.0, training_symbols: int = 2) -> list:
    """Achievable-rate rows per SNR point for the analytic rate figure.

    Columns: snr_db, rate_mrc, rate_zf, rate_lmmse, rate_awgn,
    rate_mismatched_over, rate_mismatched_under. The mismatched columns use
    the coupled evolution with the assumed power set to the 90th / 10th
    percentile of a mean-power estimate over `training_symbols` Gaussian
    symbols (a documented reconstruction; the estimator itself is not pinned
    down by the analysis). ZF columns are NaN when beta >= 1.
    """
    es_over = power_estimate_percentile(Es, training_symbols, 0.90)
    es_under = power_estimate_percentile(Es, training_symbols, 0.10)
    rows = []
    for snr_db in snr_db_values:
        N0 = Es / db_to_linear(snr_db)
        zf_rate = (
            achievable_rate(Es, generic_fixed_point("zf", beta, Es, N0)) if beta < 1 else math.nan
        )
        rows.append(
            {
                "snr_db": float(snr_db),
                "rate_mrc": achievable_rate(Es, generic_fixed_point("mrc", beta, Es, N0)),
                "rate_zf": zf_rate,
                "rate_lmmse": achievable_rate(Es, se_fixed_point(beta, Es, N0)),
                "rate_awgn": awgn_rate(Es, N0),
                "rate_mismatched_over": achievable_rate(
                    Es, mismatched_se_fixed_point(beta, Es, es_over, N0).sigma_sq
                ),
                "rate_mismatched_under": achievable_rate(
                    Es, mismatched_se_fixed_point(beta, Es, es_under, N0).sigma_sq
                ),
            }
        )
    return rows
