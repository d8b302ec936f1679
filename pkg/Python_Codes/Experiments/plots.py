"""
plots.py
Render a sweep CSV into SVG line charts: one file per channel kind, MSE on a
log axis against K or SNR, one line per protocol.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

from .sweep import RESULT_COLUMNS, summarize_results

X_AXES = {"K": "number of sensors K", "snr_db": "SNR [dB]"}


def read_results(csv_path):
    if not os.path.exists(csv_path):
        raise FileNotFoundError(f"results file not found: {csv_path}")
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{csv_path} is missing columns {missing}")
    return frame


def plot_results(csv_path, x="K", series="protocol", out_dir=None, verbose=True):
    """
    Args:
        csv_path: sweep results CSV
        x: "K" or "snr_db"
        series: column whose values become separate lines
        out_dir: where the SVGs go (default: next to the CSV)

    Returns:
        list of written SVG paths, one per channel kind
    """
    if x not in X_AXES:
        raise ValueError(f"x must be one of {sorted(X_AXES)}, got {x!r}")
    results = read_results(csv_path)
    summary = summarize_results(results)
    if series not in ("protocol", "channel"):
        raise ValueError(f"series must be protocol or channel, got {series!r}")
    other = "snr_db" if x == "K" else "K"
    out_dir = out_dir or os.path.dirname(os.path.abspath(csv_path))
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(csv_path))[0]

    plt.rcParams["svg.hashsalt"] = "tbma"
    written = []
    for channel, block in summary.groupby("channel", sort=True):
        fig, ax = plt.subplots(figsize=(6, 4))
        fixed_values = sorted(block[other].unique())
        for key, line in block.groupby([series, other], sort=True):
            name, fixed = key
            line = line.sort_values(x)
            label = str(name) if len(fixed_values) == 1 else f"{name} ({other}={fixed:g})"
            ax.errorbar(line[x], line["mse"], yerr=line["stderr"], marker="o", capsize=3, label=label)
        ax.set_yscale("log")
        if x == "K":
            ax.set_xscale("log", base=2)
        ax.set_xlabel(X_AXES[x])
        ax.set_ylabel("MSE")
        ax.set_title(f"{channel} channel")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}_{channel}_{x}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
        if verbose:
            print(f"✅ Saved plot to: {path}")
    return written
