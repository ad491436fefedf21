"""Non-interactive figure rendering for the report paths.

Every renderer draws from already-written tabular data, writes a PNG
next to it, and returns the path.  The Agg backend is forced so the
CLI works headless; figures are a convenience view of the CSV and
JSON outputs, which remain the authoritative records.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "energy_figure",
    "ledger_figure",
    "martingale_figure",
    "scan_figure",
    "shift_figure",
    "weight_figure",
    "weighted_budget_figure",
]

_DPI = 110


def _finish(fig, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, dpi=_DPI)
    plt.close(fig)
    return out


def energy_figure(series: Sequence[tuple[np.ndarray, np.ndarray]], path: str | Path) -> Path:
    """Per-path kinetic energy traces with the ensemble mean.

    Accepts (times, kinetic) pairs; the mean trace is drawn only when
    every path covers the same time axis.
    """
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for times, row in series:
        ax.plot(times, row, color="steelblue", alpha=0.3, linewidth=0.8)
    lengths = {len(times) for times, _ in series}
    if len(series) > 1 and len(lengths) == 1:
        stacked = np.stack([row for _, row in series])
        ax.plot(series[0][0], stacked.mean(axis=0), color="crimson",
                linewidth=1.8, label="ensemble mean")
        ax.legend(loc="best")
    ax.set_xlabel("time")
    ax.set_ylabel("kinetic energy")
    return _finish(fig, path)


def ledger_figure(
    times: np.ndarray,
    terms: dict[str, np.ndarray],
    path: str | Path,
) -> Path:
    """Cumulative ledger terms for one path."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, series in terms.items():
        ax.plot(times, series, linewidth=1.4, label=label)
    ax.set_xlabel("time")
    ax.set_ylabel("cumulative term")
    ax.legend(loc="best", fontsize=8)
    return _finish(fig, path)


def martingale_figure(times: np.ndarray, z_scores: np.ndarray, gate: float, path: str | Path) -> Path:
    """Ensemble z-scores of the martingale term against the gate."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(times, z_scores, color="darkgreen", linewidth=1.4)
    ax.axhline(gate, color="gray", linestyle="--", linewidth=1.0)
    ax.axhline(-gate, color="gray", linestyle="--", linewidth=1.0)
    ax.set_xlabel("time")
    ax.set_ylabel("z score")
    return _finish(fig, path)


def weighted_budget_figure(
    times: np.ndarray,
    terms: dict[str, np.ndarray],
    path: str | Path,
) -> Path:
    """Four weighted budget terms and their running sum."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, series in terms.items():
        width = 2.0 if label == "residual" else 1.2
        ax.plot(times, series, linewidth=width, label=label)
    ax.set_xlabel("time")
    ax.set_ylabel("cumulative term")
    ax.legend(loc="best", fontsize=8)
    return _finish(fig, path)


def scan_figure(
    epsilons: Sequence[float],
    values: Sequence[float],
    slope: float | None,
    path: str | Path,
) -> Path:
    """Log-log scan of norms against the smoothing scale with its fit."""
    eps = np.asarray(epsilons, dtype=float)
    vals = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(eps, np.abs(vals), "o", color="navy")
    positive = np.abs(vals) > 0
    if slope is not None and np.sum(positive) >= 2:
        x = np.log(eps[positive])
        y = np.log(np.abs(vals[positive]))
        intercept = float(np.mean(y) - slope * np.mean(x))
        ax.loglog(eps, np.exp(intercept) * eps**slope, "--", color="crimson",
                  label=f"slope {slope:.3f}")
        ax.legend(loc="best")
    ax.set_xlabel("smoothing scale")
    ax.set_ylabel("norm")
    return _finish(fig, path)


def shift_figure(lengths: Sequence[float], norms: Sequence[float], alpha: float, path: str | Path) -> Path:
    """Shift-difference norms against shift length with the fitted exponent."""
    ell = np.asarray(lengths, dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(ell, norms, "s", color="darkorange")
    ref = norms[0] * (ell / ell[0]) ** alpha
    ax.loglog(ell, ref, "--", color="gray", label=f"exponent {alpha:.3f}")
    ax.set_xlabel("shift length")
    ax.set_ylabel("difference norm")
    ax.legend(loc="best")
    return _finish(fig, path)


def weight_figure(weights: np.ndarray, fitted_decay: float, path: str | Path) -> Path:
    """Mode weights against index with the fitted decay law."""
    j = np.arange(1, len(weights) + 1)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(j, weights, "o", color="teal")
    ax.loglog(j, weights[0] * j ** (-fitted_decay), "--", color="gray",
              label=f"decay {fitted_decay:.3f}")
    ax.set_xlabel("mode index")
    ax.set_ylabel("weight")
    ax.legend(loc="best")
    return _finish(fig, path)
