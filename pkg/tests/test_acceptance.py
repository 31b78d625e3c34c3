"""Acceptance suite: every criterion prints one [criterion N] PASS/FAIL line.

The Monte Carlo criteria are seeded and deterministic; tolerances are the
ones stated with each criterion, never loosened at run time. Run with
`pytest tests/test_acceptance.py -v -s` to see the per-criterion lines and
timings (plain `pytest` captures them but still enforces every assertion).
"""

import math
import time

import numpy as np
import pytest

from mimoeq import amp_core, analysis, cli, harness, linear_eq, model


def _report(number, description, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {number}] {status}: {description} {detail}".rstrip())
    assert ok, f"criterion {number} failed: {description} {detail}"


# --- criterion 1: SER figure reproduction (property form) ---------------------

FIG3_SEED = 1001
FIG3_TRIALS = 10_000
FIG3_USERS = 96


@pytest.fixture(scope="module")
def fig3_sweep():
    """128x96 QPSK paired sweep over the documented default grid's upper half.

    Points below 6 dB sit far outside the SER window checked by criterion 1
    (L-MMSE SER > 0.1, measured at 0.15+ already at 6 dB), so the budget goes
    to the points that can qualify; window membership is still decided by the
    measured L-MMSE SER below.
    """
    spec = harness.ExperimentSpec(
        base=model.SystemConfig(bs_antennas=128, users=FIG3_USERS, master_seed=FIG3_SEED),
        sweep_start=6.0,
        sweep_stop=14.0,
        sweep_step=1.0,
        algorithms=("zf", "lmmse", "nope"),
        trials=FIG3_TRIALS,
        workers=2,
    )
    start = time.perf_counter()
    per_point = {point: harness.run_ser_trials(spec, point) for point in harness.sweep_points(spec)}
    elapsed = time.perf_counter() - start
    return spec, per_point, elapsed


def test_criterion_1_nope_matches_lmmse_in_ser_window(fig3_sweep):
    spec, per_point, elapsed = fig3_sweep
    symbols = FIG3_USERS * FIG3_TRIALS
    window_points = []
    worst = 0.0
    ok = True
    detail_parts = []
    for point, errors in sorted(per_point.items()):
        p_lmmse = errors["lmmse"].sum() / symbols
        if not 1e-3 <= p_lmmse <= 1e-1:
            continue
        window_points.append(point)
        p_nope = errors["nope"].sum() / symbols
        p_zf = errors["zf"].sum() / symbols
        bound = analysis.awgn_ser_qpsk(1.0, analysis.db_to_linear(-point))
        per_trial_diff = (errors["nope"] - errors["lmmse"]) / FIG3_USERS
        paired_se = per_trial_diff.std(ddof=1) / math.sqrt(FIG3_TRIALS)
        gap = abs(p_nope - p_lmmse)
        allowance = max(0.10 * p_lmmse, 2.0 * paired_se)
        worst = max(worst, gap / p_lmmse)
        if gap > allowance:
            ok = False
            detail_parts.append(f"{point} dB: gap {gap:.2e} > allowance {allowance:.2e}")
        if not (bound <= p_lmmse and bound <= p_nope):
            ok = False
            detail_parts.append(f"{point} dB: AWGN bound {bound:.2e} does not lower-bound")
        if not p_zf >= p_lmmse:
            ok = False
            detail_parts.append(f"{point} dB: ZF {p_zf:.2e} below L-MMSE {p_lmmse:.2e}")
    if len(window_points) < 3:
        ok = False
        detail_parts.append(f"only {len(window_points)} window points")
    detail = (
        f"(window {window_points[0]:.0f}-{window_points[-1]:.0f} dB, {len(window_points)} points, "
        f"worst relative gap {worst:.1%}, {FIG3_TRIALS} frames/point, {elapsed:.0f}s)"
        if window_points
        else "; ".join(detail_parts)
    )
    if detail_parts and window_points:
        detail += " " + "; ".join(detail_parts)
    _report(1, "NOPE tracks exact L-MMSE SER within 10% (or 2 paired se) across the window", ok, detail)


# --- criterion 2: MOAR reference values ----------------------------------------

def test_criterion_2_moar_values():
    one_db = analysis.db_to_linear(1.0)
    lmmse = analysis.moar("lmmse", one_db, 1.5)
    zf = analysis.moar("zf", one_db, 1.5)
    mrc = analysis.moar("mrc", one_db, 1.5)
    ok = abs(lmmse - 0.31819) <= 1e-4 and abs(zf - 0.20567) <= 1e-4 and abs(mrc - 0.11249) <= 1e-4
    # independent cross-check: the SNR-loss at the returned ratio is exactly 1 dB
    for eq, beta in (("lmmse", lmmse), ("zf", zf), ("mrc", mrc)):
        ok = ok and abs(analysis.snr_loss(eq, beta, 1.5) - one_db) <= 1e-9 * one_db
    # consistency with the "antenna ratio below 0.3" remark for L-MMSE
    ok = ok and lmmse > 0.3 and analysis.snr_loss("lmmse", 0.3, 1.5) < one_db
    _report(2, "MOAR values 0.31819 / 0.20567 / 0.11249 with snr-loss round-trip", ok,
            f"(lmmse={lmmse:.5f}, zf={zf:.5f}, mrc={mrc:.5f})")


# --- criterion 3: state-evolution fixed point vs quadratic ----------------------

def test_criterion_3_fixed_point_vs_quadratic():
    beta, Es, N0 = 0.5, 1.0, 0.1
    fp = analysis.se_fixed_point(beta, Es, N0)
    b = Es - beta * Es - N0
    root = (-b + math.sqrt(b * b + 4.0 * N0 * Es)) / 2.0  # independent closed form
    ok = abs(fp - root) <= 1e-9 and abs(fp - 0.174166) <= 1e-6
    _report(3, "se_fixed_point(0.5, 1, 0.1) equals the positive quadratic root", ok,
            f"(fp={fp:.12f}, root={root:.12f})")


# --- criterion 4: AMP / NOPE equivalence with exact L-MMSE ----------------------

def test_criterion_4_large_system_equivalence():
    B, U, Es, N0, T, seeds = 512, 256, 1.0, 0.1, 20, 50
    start = time.perf_counter()
    mse = {"mmse_amp": 0.0, "nope": 0.0, "lmmse": 0.0}
    z_err = {"mmse_amp": 0.0, "nope": 0.0}
    for seed in range(seeds):
        cfg = model.SystemConfig(
            bs_antennas=B, users=U, noise_power=N0, constellation="gaussian", master_seed=seed
        )
        channel, frame = model.generate_trial(cfg, 0)
        H, y, x = channel.H, frame.y, frame.x
        for algo in ("mmse_amp", "nope"):
            trace = amp_core.mmse_amp(H, y, Es, T) if algo == "mmse_amp" else amp_core.nope(H, y, T)
            mse[algo] += float(np.mean(np.abs(trace.final_estimate - x) ** 2))
            z_err[algo] += float(np.mean(np.abs(trace.records[-1].z - x) ** 2))
        mse["lmmse"] += float(np.mean(np.abs(linear_eq.mmse_equalize(H, y, Es, N0) - x) ** 2))
    elapsed = time.perf_counter() - start
    sir_prediction = Es / analysis.se_fixed_point(U / B, Es, N0)
    ok = True
    details = []
    for algo in ("mmse_amp", "nope"):
        rel_mse = abs(mse[algo] - mse["lmmse"]) / mse["lmmse"]
        sir = Es / (z_err[algo] / seeds)
        rel_sir = abs(sir - sir_prediction) / sir_prediction
        details.append(f"{algo}: mse gap {rel_mse:.2%}, sir gap {rel_sir:.2%}")
        ok = ok and rel_mse < 0.05 and rel_sir < 0.10
    _report(4, "MMSE-AMP and NOPE match exact L-MMSE MSE (5%) and the SE SIR (10%)", ok,
            f"({'; '.join(details)}; {elapsed:.0f}s)")


# --- criterion 5: mismatched-power state evolution -------------------------------

def test_criterion_5_mismatched_se_verification():
    Es, N0, draws = 1.0, 0.1, 50
    B, U = 510, 153  # beta = 0.3 exactly
    beta = U / B
    start = time.perf_counter()
    ok = True
    details = []
    for es_prime in (4.0 * Es, Es / 4.0):
        prediction = Es / analysis.mismatched_se_fixed_point(beta, Es, es_prime, N0).sigma_sq
        total = 0.0
        for seed in range(draws):
            cfg = model.SystemConfig(
                bs_antennas=B, users=U, noise_power=N0, constellation="gaussian", master_seed=2000 + seed
            )
            channel, _ = model.generate_trial(cfg, 0)
            W = linear_eq.equalizer_matrix(channel.H, "lmmse_mismatched", Es, N0, es_prime)
            total += float(np.mean(linear_eq.output_sinr(W, channel.H, Es, N0)))
        empirical = total / draws
        rel = abs(empirical - prediction) / prediction
        details.append(f"Es'={es_prime:g}: emp {empirical:.3f} vs SE {prediction:.3f} ({rel:.2%})")
        ok = ok and rel < 0.10
    # collapse: Es' = Es reproduces the matched recursion iterate-for-iterate
    matched = N0 + beta * Es
    state = analysis.SeState(sigma_sq=matched, theta_sq=matched)
    collapse_gap = 0.0
    for _ in range(60):
        matched = analysis.se_step(matched, beta, Es, N0)
        state = analysis.mismatched_se_step(state, beta, Es, Es, N0)
        collapse_gap = max(
            collapse_gap,
            abs(state.sigma_sq - matched) / matched,
            abs(state.theta_sq - matched) / matched,
        )
    ok = ok and collapse_gap <= 1e-12
    elapsed = time.perf_counter() - start
    _report(5, "mismatched L-MMSE SIR matches the coupled SE (10%); Es'=Es collapse at 1e-12", ok,
            f"({'; '.join(details)}; collapse gap {collapse_gap:.1e}; {elapsed:.0f}s)")


# --- criterion 6: SURE tuning correctness ----------------------------------------

def test_criterion_6_sure_minimizer_and_unbiasedness():
    # gamma = Es/sigma^2 drawn in [1, 20]: the equalizer's operating range,
    # where the 5% band sits several sigma above SURE's own sampling noise
    # (relative std 1/(gamma sqrt(U))).
    rng = np.random.default_rng(3001)
    U = 10_000
    ok = True
    worst_grid = 0.0
    worst_mse = 0.0
    for _ in range(100):
        Es = float(rng.uniform(0.2, 4.0))
        gamma_true = float(rng.uniform(1.0, 20.0))
        sigma_sq = Es / gamma_true
        x = math.sqrt(Es / 2) * (rng.standard_normal(U) + 1j * rng.standard_normal(U))
        w = math.sqrt(sigma_sq / 2) * (rng.standard_normal(U) + 1j * rng.standard_normal(U))
        z = x + w
        gamma, _ = amp_core.gamma_min(z, sigma_sq)
        zss = float(np.vdot(z, z).real)
        raw = zss / (U * sigma_sq) - 1.0
        grid = np.linspace(0.0, 10.0 * max(raw, 1.0), 10_000)
        sure_grid = sigma_sq * (grid - 1.0) / (grid + 1.0) + zss / (U * (grid + 1.0) ** 2)
        step = grid[1] - grid[0]
        grid_gap = abs(gamma - grid[int(np.argmin(sure_grid))])
        worst_grid = max(worst_grid, grid_gap / step)
        ok = ok and grid_gap <= step
        psi_hat = amp_core.sure_estimate(sigma_sq, gamma_true, z)
        mse_mc = float(np.mean(np.abs(gamma_true / (gamma_true + 1.0) * z - x) ** 2))
        rel = abs(psi_hat - mse_mc) / mse_mc
        worst_mse = max(worst_mse, rel)
        ok = ok and rel < 0.05
    _report(6, "gamma_min equals the SURE grid minimizer; SURE matches MC MSE within 5%", ok,
            f"(worst grid gap {worst_grid:.2f} steps, worst MSE deviation {worst_mse:.2%})")


# --- criterion 7: robust variant on faded channels --------------------------------

ROBUST_SEED = 4001
ROBUST_TRIALS = 10_000


@pytest.fixture(scope="module")
def robust_sweep():
    spec = harness.ExperimentSpec(
        base=model.SystemConfig(bs_antennas=128, users=FIG3_USERS, master_seed=ROBUST_SEED),
        sweep_start=10.0,
        sweep_stop=16.0,
        sweep_step=2.0,
        algorithms=("lmmse", "robust_nope"),
        trials=ROBUST_TRIALS,
        workers=2,
        gain_profile=model.GainProfile(kind="loguniform", power_bounds=(0.25, 4.0)),
    )
    start = time.perf_counter()
    per_point = {point: harness.run_ser_trials(spec, point) for point in harness.sweep_points(spec)}
    return spec, per_point, time.perf_counter() - start


def test_criterion_7_robust_nope_on_faded_channels(robust_sweep):
    spec, per_point, elapsed = robust_sweep
    symbols = FIG3_USERS * ROBUST_TRIALS
    ok = True
    window_points = []
    worst = 0.0
    details = []
    for point, errors in sorted(per_point.items()):
        p_lmmse = errors["lmmse"].sum() / symbols
        if not 1e-3 <= p_lmmse <= 1e-1:
            continue
        window_points.append(point)
        p_robust = errors["robust_nope"].sum() / symbols
        rel = abs(p_robust - p_lmmse) / p_lmmse
        worst = max(worst, rel)
        if rel > 0.15:
            ok = False
            details.append(f"{point} dB: {rel:.1%}")
    if len(window_points) < 2:
        ok = False
        details.append(f"only {len(window_points)} window points")

    # Theorem-style estimator check on the synthetic decoupled model
    rng = np.random.default_rng(ROBUST_SEED)
    U, Es, sigma_sq, beta = 10_000, 1.0, 0.2, 0.75
    d = np.sqrt(np.exp(rng.uniform(math.log(0.25), math.log(4.0), U)))
    x = math.sqrt(Es / 2) * (rng.standard_normal(U) + 1j * rng.standard_normal(U))
    w = math.sqrt(sigma_sq / 2) * (rng.standard_normal(U) + 1j * rng.standard_normal(U))
    z = d**2 * x + d * w
    es_hat = amp_core.estimate_signal_power(z, d, beta, residual_norm_sq=(U / beta) * sigma_sq)
    es_gap = abs(es_hat - Es) / Es
    ok = ok and es_gap < 0.05
    detail = (
        f"(window {window_points[0]:.0f}-{window_points[-1]:.0f} dB, worst SER gap {worst:.1%}, "
        f"Es-hat gap {es_gap:.2%}, {ROBUST_TRIALS} frames/point, {elapsed:.0f}s)"
        if window_points
        else "; ".join(details)
    )
    if details and window_points:
        detail += " " + "; ".join(details)
    _report(7, "robust NOPE within 15% of exact L-MMSE on faded channels; Es-hat within 5%", ok, detail)


# --- criterion 8: CLI determinism ---------------------------------------------------

def test_criterion_8_cli_determinism(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "bs_antennas = 64\n"
        "users = 32\n"
        "sweep_start = 8\n"
        "sweep_stop = 10\n"
        "sweep_step = 1\n"
        "algorithms = zf,lmmse,nope\n"
        "trials = 200\n"
        "seed = 99\n"
    )
    outputs = {}
    for name, extra in (("a", []), ("b", []), ("par2", ["--workers", "2"]), ("par3", ["--workers", "3"])):
        out = tmp_path / f"{name}.csv"
        code = cli.main(["ser", "--config", str(cfg), "--output", str(out), "--no-figure", *extra])
        assert code == 0
        outputs[name] = out.read_bytes()
    same = outputs["a"] == outputs["b"] == outputs["par2"] == outputs["par3"]

    # se-check path, serial vs parallel
    sec = {}
    for name, extra in (("s1", []), ("s2", ["--workers", "2"])):
        out = tmp_path / f"sec_{name}.csv"
        code = cli.main(
            ["se-check", "--config", str(cfg), "--constellation", "gaussian", "--trials", "40",
             "--algorithms", "lmmse,nope", "--output", str(out), "--no-figure", *extra]
        )
        assert code == 0
        sec[name] = out.read_bytes()
    same = same and sec["s1"] == sec["s2"]
    _report(8, "repeated CLI runs (serial and parallel) produce byte-identical CSV", same)
