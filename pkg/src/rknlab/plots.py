"""Matplotlib figure rendering for evaluation outputs.

Figures are written next to the CSVs they mirror, as SVG line charts.
Rendering is headless (Agg backend) and purely file-based.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

GAIN_ZOOM_STEPS = 60


def plot_consistency(report, path: str) -> None:
    """Estimated vs batch-empirical standard deviations over time."""
    T = report.empirical_std.shape[0]
    t = range(T)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for k, (ax, label) in enumerate(zip(axes, ("position", "velocity"))):
        ax.plot(t, report.estimated_std[:, k], label="estimated std")
        ax.plot(t, report.empirical_std[:, k], "-.", label="empirical std")
        ax.set_xlabel("time step")
        ax.set_ylabel(f"{label} std")
        ax.legend()
        ax.grid(True, alpha=0.3)
    fig.suptitle(f"{report.method} consistency ({report.nu_db:.0f} dB)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_gain_trace(report, path: str, zoom: int = GAIN_ZOOM_STEPS) -> None:
    """Per-step gain components from a single series, zoomed to the start."""
    T = min(zoom, report.gain_trace.shape[0])
    t = range(T)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, report.gain_trace[:T, 0], label="position gain")
    ax.plot(t, report.gain_trace[:T, 1], label="velocity gain")
    ax.set_xlabel("time step")
    ax.set_ylabel("gain")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.suptitle(f"{report.method} gain trace ({report.nu_db:.0f} dB)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_sweep(reports, path: str) -> None:
    """MSE (dB) against the noise heterogeneity level, one line per method."""
    by_method = {}
    for r in reports:
        by_method.setdefault(r.method, []).append((r.nu_db, r.mse_db))
    fig, ax = plt.subplots(figsize=(7, 4))
    for method, points in by_method.items():
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker="o", label=method)
    ax.set_xlabel("noise heterogeneity [dB]")
    ax.set_ylabel("MSE [dB]")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report_figures(report, out_dir: str) -> list:
    written = []
    path = os.path.join(out_dir, f"consistency_{report.method}.svg")
    plot_consistency(report, path)
    written.append(path)
    if report.gain_trace is not None:
        path = os.path.join(out_dir, f"gain_trace_{report.method}.svg")
        plot_gain_trace(report, path)
        written.append(path)
    return written
