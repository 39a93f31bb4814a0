"""Figures for sweep results (mean rate per scheme against the sweep value)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import mean_by  # noqa: E402

_LABELS = {
    "joint": "joint (FD-FF)",
    "equal": "equal power",
    "source_only": "source only",
    "relay_only": "relay only",
}


def _label(scheme: str) -> str:
    if scheme.startswith("conventional_zeta"):
        return f"conventional, zeta = {scheme[len('conventional_zeta'):]} dB"
    return _LABELS.get(scheme, scheme)


def plot_rows(rows, path: str | Path, xlabel: str, logx: bool = False) -> Path:
    means = mean_by(rows)
    schemes = list(dict.fromkeys(r.scheme for r in rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in schemes:
        pts = sorted((x, y) for (name, x), y in means.items() if name == s)
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=_label(s))
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("achievable rate (bps/Hz)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_rate_vs_power(rows, path):
    return plot_rows(rows, path, "individual power budget (dBm)")


def plot_rate_vs_alpha(rows, path):
    return plot_rows(rows, path, "loop-back gain alpha^2", logx=True)
