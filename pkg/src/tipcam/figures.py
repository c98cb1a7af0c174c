"""Matplotlib figure rendering for the experiment reports.

Everything draws through the Agg backend straight to PNG files placed
next to the delimited output. Rendering is deterministic: fixed
rcParams, no timestamps, data-driven content only.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_RC = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.autolayout": True,
}


def _new_figure(width_in: float, height_in: float):
    plt.rcParams.update(_RC)
    return plt.figure(figsize=(width_in, height_in))


def plot_accuracy_xy(rows: list[dict], path) -> None:
    """Measured vs commanded planar offsets plus the error cloud."""
    ok = [r for r in rows if r["status"] == "ok"]
    fig = _new_figure(7.2, 3.2)
    ax1 = fig.add_subplot(1, 2, 1)
    ax1.scatter([r["truth_dx_mm"] for r in ok], [r["measured_dx_mm"] for r in ok], s=12, label="x")
    ax1.scatter([r["truth_dy_mm"] for r in ok], [r["measured_dy_mm"] for r in ok], s=12, marker="^", label="y")
    lim = 2.0
    ax1.plot([-lim, lim], [-lim, lim], "k--", linewidth=0.8)
    ax1.set_xlabel("true offset (mm)")
    ax1.set_ylabel("measured offset (mm)")
    ax1.legend()
    ax2 = fig.add_subplot(1, 2, 2)
    ax2.scatter(
        [1000 * r["err_dx_mm"] for r in ok], [1000 * r["err_dy_mm"] for r in ok], s=12, color="tab:red"
    )
    ax2.axhline(0, color="k", linewidth=0.6)
    ax2.axvline(0, color="k", linewidth=0.6)
    ax2.set_xlabel("x error (um)")
    ax2.set_ylabel("y error (um)")
    fig.savefig(path)
    plt.close(fig)


def plot_accuracy_scalar(rows: list[dict], truth_key: str, measured_key: str, unit: str, path) -> None:
    """Measured vs true values for a single-axis sweep (yaw)."""
    ok = [r for r in rows if r["status"] == "ok"]
    fig = _new_figure(4.0, 3.2)
    ax = fig.add_subplot(1, 1, 1)
    xs = [r[truth_key] for r in ok]
    ys = [r[measured_key] for r in ok]
    ax.scatter(xs, ys, s=14)
    if xs:
        lo, hi = min(xs), max(xs)
        ax.plot([lo, hi], [lo, hi], "k--", linewidth=0.8)
    ax.set_xlabel(f"true ({unit})")
    ax.set_ylabel(f"measured ({unit})")
    fig.savefig(path)
    plt.close(fig)


def plot_accuracy_tilt(rows: list[dict], path) -> None:
    """Per-axis tilt recovery scatter."""
    ok = [r for r in rows if r["status"] == "ok"]
    fig = _new_figure(7.2, 3.2)
    for idx, axis in enumerate(("x", "y")):
        ax = fig.add_subplot(1, 2, idx + 1)
        xs = [r[f"truth_tilt_{axis}_deg"] for r in ok]
        ys = [r[f"measured_tilt_{axis}_deg"] for r in ok]
        ax.scatter(xs, ys, s=12)
        if xs:
            lo, hi = min(xs), max(xs)
            ax.plot([lo, hi], [lo, hi], "k--", linewidth=0.8)
        ax.set_xlabel(f"true tilt {axis} (deg)")
        ax.set_ylabel(f"measured tilt {axis} (deg)")
    fig.savefig(path)
    plt.close(fig)


def plot_robustness(deltas: list[float], rates: dict[str, list[float]], path) -> None:
    """Pick-and-place success rate against injected calibration error."""
    fig = _new_figure(4.6, 3.4)
    ax = fig.add_subplot(1, 1, 1)
    markers = {"closed": "o", "open": "s"}
    for policy, values in sorted(rates.items()):
        ax.plot(
            deltas,
            [100.0 * v for v in values],
            marker=markers.get(policy, "d"),
            label=f"{policy}-loop",
        )
    ax.set_xlabel("calibration error (mm)")
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(-5, 105)
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
