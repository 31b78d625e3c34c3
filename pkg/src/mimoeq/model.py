"""System model: channel, symbol, and noise generation with a seeded randomness contract.

The uplink model is y = H x + n with H of shape (B, U): B base-station
antennas receiving U single-antenna users. All randomness flows through
`substream`, which derives an independent generator per (master_seed,
trial_index, purpose) so that Monte Carlo trials reproduce bit-identically
regardless of execution order or parallelism.
"""

import math
from dataclasses import dataclass

import numpy as np

CONSTELLATIONS = ("qpsk", "bpsk", "gaussian")
FINITE_CONSTELLATIONS = ("qpsk", "bpsk")

_PURPOSE_CODES = {"channel": 0, "symbols": 1, "noise": 2}


def substream(master_seed: int, trial_index: int, purpose: str) -> np.random.Generator:
    """Derive the RNG stream for one randomness source of one trial.

    The stream seed is SeedSequence([master_seed, trial_index, code]) with
    code 0/1/2 for channel/symbols/noise. Streams for distinct purposes are
    statistically independent, and the mapping is a pure function of its
    arguments, which is what makes parallel sweeps reproducible.
    """
    if trial_index < 0:
        raise ValueError("trial_index must be nonnegative")
    try:
        code = _PURPOSE_CODES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    seq = np.random.SeedSequence([int(master_seed), int(trial_index), code])
    return np.random.default_rng(seq)


def complex_normal(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples, CN(0, variance) per entry."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class SystemConfig:
    """Static parameters of one simulated uplink.

    Powers are linear scale: signal_power is the per-symbol energy Es,
    noise_power is the variance per complex noise entry. The antenna ratio
    beta is always derived as users / bs_antennas, never stored.
    """

    bs_antennas: int
    users: int
    signal_power: float = 1.0
    noise_power: float = 0.1
    mismatched_power: float | None = None
    constellation: str = "qpsk"
    max_iterations: int = 20
    master_seed: int = 1

    def __post_init__(self):
        if self.bs_antennas < 1 or self.users < 1:
            raise ValueError("bs_antennas and users must be >= 1")
        if self.signal_power <= 0:
            raise ValueError("signal_power must be positive")
        if self.noise_power < 0:
            raise ValueError("noise_power must be nonnegative")
        if self.mismatched_power is not None and self.mismatched_power <= 0:
            raise ValueError("mismatched_power must be positive when set")
        if self.constellation not in CONSTELLATIONS:
            raise ValueError(f"unknown constellation {self.constellation!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    @property
    def antenna_ratio(self) -> float:
        """beta = U / B."""
        return self.users / self.bs_antennas


@dataclass(frozen=True)
class GainProfile:
    """Per-user large-scale power gains d_l^2 applied to the channel columns.

    kind 'uniform' leaves the channel with unit column variance, 'explicit'
    fixes the power gains, 'loguniform' draws them log-uniformly from
    power_bounds once per trial (from that trial's channel stream).
    """

    kind: str = "uniform"
    power_gains: tuple = None
    power_bounds: tuple = None

    def __post_init__(self):
        if self.kind not in ("uniform", "explicit", "loguniform"):
            raise ValueError(f"unknown gain profile kind {self.kind!r}")
        if self.kind == "explicit":
            if not self.power_gains or any(g <= 0 for g in self.power_gains):
                raise ValueError("explicit gain profile needs positive power gains")
        if self.kind == "loguniform":
            if (
                not self.power_bounds
                or len(self.power_bounds) != 2
                or self.power_bounds[0] <= 0
                or self.power_bounds[1] < self.power_bounds[0]
            ):
                raise ValueError("loguniform gain profile needs bounds 0 < lo <= hi")


UNIFORM_GAINS = GainProfile()


@dataclass(eq=False)
class ChannelRealization:
    """One channel draw: H is (B, U); gains are per-user amplitudes (length U)."""

    H: np.ndarray
    true_gains: np.ndarray | None = None
    estimated_gains: np.ndarray | None = None


@dataclass(eq=False)
class TransmitFrame:
    """One transmission: y = H x + n. The noise vector is kept for test oracles."""

    x: np.ndarray
    y: np.ndarray
    n: np.ndarray


def gen_uniform_channel(B: int, U: int, rng: np.random.Generator) -> ChannelRealization:
    """Draw H with i.i.d. CN(0, 1/B) entries (uniform channel gains)."""
    if B < 1 or U < 1:
        raise ValueError("channel dimensions must be >= 1")
    return ChannelRealization(H=complex_normal(rng, (B, U), 1.0 / B))


def gen_faded_channel(B: int, U: int, gains, rng: np.random.Generator) -> ChannelRealization:
    """Draw H = H_uniform * diag(gains), one amplitude gain per user.

    gains are amplitudes d_l (not powers); entries of column l are then
    CN(0, d_l^2 / B). estimated_gains is populated from the realized H.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (U,):
        raise ValueError(f"gains must have shape ({U},), got {gains.shape}")
    if np.any(gains <= 0):
        raise ValueError("all gains must be positive")
    base = gen_uniform_channel(B, U, rng)
    H = base.H * gains[None, :]
    return ChannelRealization(H=H, true_gains=gains, estimated_gains=estimate_gains(H))


def estimate_gains(H: np.ndarray) -> np.ndarray:
    """Per-user amplitude gains from the realized channel: d_l = column-l 2-norm.

    Equivalently d_l^2 = sum_j |H[j, l]|^2. An all-zero column yields 0; the
    caller decides whether that is acceptable (the robust equalizer rejects it).
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.size == 0:
        raise ValueError("H must be a nonempty matrix")
    return np.sqrt(np.einsum("bu,bu->u", H.conj(), H).real)


def constellation_points(constellation: str, Es: float) -> np.ndarray:
    """Symbol table scaled to per-symbol energy Es, in lexicographic order (re, im)."""
    if Es <= 0:
        raise ValueError("Es must be positive")
    if constellation == "qpsk":
        a = math.sqrt(Es / 2.0)
        return np.array([-a - 1j * a, -a + 1j * a, a - 1j * a, a + 1j * a])
    if constellation == "bpsk":
        a = math.sqrt(Es)
        return np.array([-a + 0j, a + 0j])
    raise ValueError(f"no finite symbol table for constellation {constellation!r}")


def draw_symbols(constellation: str, U: int, Es: float, rng: np.random.Generator) -> np.ndarray:
    """Draw U i.i.d. transmit symbols with zero mean and E|x|^2 = Es."""
    if U < 1:
        raise ValueError("U must be >= 1")
    if Es <= 0:
        raise ValueError("Es must be positive")
    if constellation == "gaussian":
        return complex_normal(rng, (U,), Es)
    table = constellation_points(constellation, Es)
    return table[rng.integers(0, len(table), size=U)]


def transmit(H: np.ndarray, x: np.ndarray, N0: float, rng: np.random.Generator) -> TransmitFrame:
    """Send x through H with additive CN(0, N0) noise per receive antenna."""
    H = np.asarray(H)
    x = np.asarray(x)
    if H.ndim != 2 or x.shape != (H.shape[1],):
        raise ValueError(f"incompatible shapes H{H.shape}, x{x.shape}")
    if N0 < 0:
        raise ValueError("N0 must be nonnegative")
    n = complex_normal(rng, (H.shape[0],), N0)
    return TransmitFrame(x=x, y=H @ x + n, n=n)


def demap(x_hat: np.ndarray, constellation: str, Es: float) -> np.ndarray:
    """Hard-decide each estimate to the nearest constellation point.

    Ties break toward the lexicographically smallest point (real part first,
    then imaginary part). Undefined for the gaussian constellation.
    """
    if constellation == "gaussian":
        raise ValueError("symbol decisions are undefined for the gaussian constellation")
    table = constellation_points(constellation, Es)
    x_hat = np.asarray(x_hat)
    # table is lexicographically sorted and argmin returns the first minimum,
    # which implements the tie-break.
    idx = np.argmin(np.abs(x_hat[:, None] - table[None, :]), axis=1)
    return table[idx]


def generate_trial(
    config: SystemConfig,
    trial_index: int,
    gain_profile: GainProfile = UNIFORM_GAINS,
) -> tuple[ChannelRealization, TransmitFrame]:
    """Generate the (channel, frame) pair for one trial of an experiment.

    Channel, symbols, and noise come from the three purpose substreams of
    (config.master_seed, trial_index), so the same trial index always sees
    the same channel and symbols even when the noise power changes between
    sweep points (common random numbers across a sweep).
    """
    ch_rng = substream(config.master_seed, trial_index, "channel")
    B, U = config.bs_antennas, config.users
    if gain_profile.kind == "uniform":
        channel = gen_uniform_channel(B, U, ch_rng)
    elif gain_profile.kind == "explicit":
        power = np.asarray(gain_profile.power_gains, dtype=float)
        if power.shape != (U,):
            raise ValueError(f"explicit gain profile needs {U} entries, got {power.size}")
        channel = gen_faded_channel(B, U, np.sqrt(power), ch_rng)
    else:
        lo, hi = gain_profile.power_bounds
        power = np.exp(ch_rng.uniform(math.log(lo), math.log(hi), size=U))
        channel = gen_faded_channel(B, U, np.sqrt(power), ch_rng)
    x = draw_symbols(
        config.constellation, U, config.signal_power, substream(config.master_seed, trial_index, "symbols")
    )
    frame = transmit(channel.H, x, config.noise_power, substream(config.master_seed, trial_index, "noise"))
    return channel, frame
