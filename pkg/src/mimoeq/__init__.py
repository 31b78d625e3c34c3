"""Massive MU-MIMO uplink equalization toolkit.

Exact linear baselines (L-MMSE / ZF / MRC), AMP-family iterative equalizers
including the nonparametric NOPE and its per-user-gain robust variant,
state-evolution and antenna-ratio analysis, and a seeded Monte Carlo sweep
harness with a CLI.
"""

__version__ = "0.1.0"

from .amp_core import (
    AmpTrace,
    DivergenceError,
    RobustEstimates,
    gamma_min,
    mmse_amp,
    nope,
    optimal_tau,
    psi_mse,
    robust_nope,
    sure_estimate,
)
from .analysis import (
    SeState,
    achievable_rate,
    awgn_rate,
    awgn_ser_qpsk,
    generic_fixed_point,
    mismatched_se_fixed_point,
    mismatched_se_step,
    moar,
    se_fixed_point,
    se_step,
    snr_loss,
)
from .harness import ExperimentSpec, SweepResult, load_spec, run_se_comparison, run_ser_sweep
from .linear_eq import mmse_equalize, mrc_equalize, mismatched_mmse_equalize, zf_equalize
from .model import (
    ChannelRealization,
    GainProfile,
    SystemConfig,
    TransmitFrame,
    demap,
    draw_symbols,
    estimate_gains,
    gen_faded_channel,
    gen_uniform_channel,
    substream,
    transmit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
