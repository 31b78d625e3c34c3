"""Render the CSV tables the CLI emits into matplotlib figures on disk."""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_LABELS = {
    "beta_max_mrc": "MRC",
    "beta_max_zf": "ZF",
    "beta_max_lmmse": "L-MMSE",
    "rate_mrc": "MRC",
    "rate_zf": "ZF",
    "rate_lmmse": "L-MMSE",
    "rate_awgn": "AWGN bound",
    "rate_mismatched_over": "L-MMSE, overestimated Es",
    "rate_mismatched_under": "L-MMSE, underestimated Es",
}


def _finite_series(rows, x_col, y_col):
    xs, ys = [], []
    for row in rows:
        x, y = float(row[x_col]), float(row[y_col])
        if math.isfinite(y):
            xs.append(x)
            ys.append(y)
    return xs, ys


def render_table(kind: str, header, rows, path) -> None:
    """Figure for one of the wide tables (moar / rates / ser)."""
    x_col = header[0]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for col in header[1:]:
        xs, ys = _finite_series(rows, x_col, col)
        if not xs:
            continue
        label = _LABELS.get(col, col.removeprefix("ser_").replace("_", " "))
        if kind == "ser":
            style = "--" if col == "ser_awgn_bound" else "-"
            ax.semilogy(xs, ys, style, marker="" if col == "ser_awgn_bound" else "o", label=label)
        else:
            ax.plot(xs, ys, label=label)
    if kind == "moar":
        ax.set_xlabel("rate [bits/user/channel use]")
        ax.set_ylabel("maximum antenna ratio")
    elif kind == "rates":
        ax.set_xlabel("SNR [dB]")
        ax.set_ylabel("achievable rate [bits/user/channel use]")
    else:
        ax.set_xlabel(x_col.replace("_", " "))
        ax.set_ylabel("symbol error rate")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep(header, rows, path) -> None:
    """Figure for long-format sweep rows (ser or empirical/analytic SIR)."""
    series = {}
    for row in rows:
        value = float(row["value"])
        if not math.isfinite(value):
            continue
        key = (row["algorithm"], row["metric"])
        series.setdefault(key, ([], []))
        series[key][0].append(float(row["sweep_value"]))
        series[key][1].append(value)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    log_scale = False
    for (algo, metric), (xs, ys) in sorted(series.items()):
        if metric == "ser":
            log_scale = True
            ax.semilogy(xs, ys, "-o", label=algo)
        elif metric == "analytic_sir_db":
            ax.plot(xs, ys, "--", label=f"{algo} (analytic)")
        else:
            ax.plot(xs, ys, "o", label=f"{algo} (empirical)")
    ax.set_xlabel("sweep value")
    ax.set_ylabel("symbol error rate" if log_scale else "output SIR [dB]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
