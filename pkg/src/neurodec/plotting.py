"""Report figures. Rendering goes through the Agg backend straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scaling import ScalingFit, predict_at  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.5, 3.2),
    "savefig.dpi": 120,
}

DEVICE_COLORS = {"eeg": "tab:blue", "meg": "tab:orange", "fmri3t": "tab:green", "fmri7t": "tab:red"}


def _color(device):
    return DEVICE_COLORS.get(device, "0.3")


def scaling_figure(rows: Sequence[dict], fits: dict[str, ScalingFit], path: str | Path, averaging="single_trial"):
    """Mean R (+/- SEM over seeds) against training trials, log x axis, with fitted lines."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for device in sorted({r["device"] for r in rows}):
            pts = sorted((r["n_train_trials"], r["pearson_r_mean"], r["pearson_r_sem"])
                         for r in rows if r["device"] == device and r["averaging"] == averaging)
            if not pts:
                continue
            x, y, e = map(np.array, zip(*pts))
            ax.errorbar(x, y, yerr=e, fmt="o", ms=3, color=_color(device), label=device)
            if device in fits:
                xs = np.geomspace(x.min(), x.max(), 50)
                ax.plot(xs, predict_at(fits[device], xs), "-", lw=1, color=_color(device))
        ax.set_xscale("log")
        ax.set_xlabel("training trials")
        ax.set_ylabel("Pearson R")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def window_figure(rows: Sequence[dict], path: str | Path):
    """Mean R against window midpoint, one line per (device, averaging)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted({(r["device"], r["averaging"]) for r in rows})
        for device, avg in keys:
            pts = sorted((0.5 * (r["window_start"] + r["window_end"]), r["pearson_r_mean"])
                         for r in rows if r["device"] == device and r["averaging"] == avg)
            t, y = zip(*pts)
            ax.plot(t, y, "o-", ms=3, lw=1, color=_color(device), label=f"{device} {avg}")
        ax.axvline(0.0, color="0.6", lw=0.5, ls=":")
        ax.set_xlabel("window centre (s from onset)")
        ax.set_ylabel("Pearson R")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
