"""Matplotlib rendering for the CLI report paths.

Figures are a convenience layer next to the delimited outputs; everything
plotted here is also written as CSV/JSON by the harness.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_RC = {
    "figure.dpi": 130,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.framealpha": 0.8,
}


def _ellipse_boundary(e, num=256):
    """Boundary points of a 2-d ellipse {v: (v-c)^T S^-1 (v-c) <= r}."""
    chol = np.linalg.cholesky(e.shape)
    angles = np.linspace(0, 2 * np.pi, num)
    circle = np.vstack([np.cos(angles), np.sin(angles)])
    return (e.center[:, None] + np.sqrt(e.radius) * chol @ circle).T


def posterior_scatter(draws, ellipses, path, center=None):
    """Draw cloud with ellipse boundaries overlaid (first two coordinates)."""
    path = Path(path)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 4.2))
        ax.scatter(draws[:, 0], draws[:, 1], s=3, alpha=0.25, color="0.55", label="posterior draws")
        styles = ["solid", "dashed", "dashdot"]
        for k, (name, e) in enumerate(ellipses.items()):
            boundary = _ellipse_boundary(e)
            ax.plot(boundary[:, 0], boundary[:, 1], linestyle=styles[k % 3], linewidth=1.4, label=name)
        if center is not None:
            ax.plot(center[0], center[1], marker="+", markersize=10, color="black", label="point estimate")
        ax.set_xlabel("coordinate 1")
        ax.set_ylabel("coordinate 2")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def pairwise_density(draws, path, gridsize=60):
    """Marginal histograms on the diagonal, KDE contours off-diagonal."""
    from .experiments import kde_grid

    path = Path(path)
    d = draws.shape[1]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(d, d, figsize=(2.2 * d, 2.2 * d), squeeze=False)
        for i in range(d):
            for j in range(d):
                ax = axes[i][j]
                if i == j:
                    ax.hist(draws[:, i], bins=40, density=True, color="0.6")
                elif j > i:
                    xs, ys, z = kde_grid(draws[:, [j, i]], gridsize=gridsize)
                    ax.contour(xs, ys, z.T, levels=6, linewidths=0.8)
                else:
                    ax.scatter(draws[:, j], draws[:, i], s=2, alpha=0.2, color="0.55")
                if i == d - 1:
                    ax.set_xlabel(f"coord {j + 1}")
                if j == 0:
                    ax.set_ylabel(f"coord {i + 1}")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def calibration_trace(state, path):
    """Learning-rate and coverage trajectories of the calibration loop."""
    path = Path(path)
    steps = [t for t, _, _ in state.trajectory]
    omegas = [om for _, om, _ in state.trajectory]
    cov = [c for _, _, c in state.trajectory]
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.0, 4.6), sharex=True)
        ax1.plot(steps, omegas, marker="o", markersize=3)
        ax1.set_ylabel("learning rate")
        ax2.plot(steps, cov, marker="o", markersize=3)
        ax2.axhline(1.0 - 0.05, color="0.3", linestyle="dashed", linewidth=1)
        ax2.set_ylabel("bootstrap coverage")
        ax2.set_xlabel("step")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def risk_density(samples_by_label, path):
    """Kernel density of held-out log risk differences per method."""
    from scipy.stats import gaussian_kde

    path = Path(path)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for label, values in samples_by_label.items():
            values = np.asarray(values, dtype=float)
            kde = gaussian_kde(values)
            xs = np.linspace(values.min() - 0.5, values.max() + 0.5, 400)
            ax.plot(xs, kde(xs), label=label, linewidth=1.4)
        ax.set_xlabel("log held-out risk difference")
        ax.set_ylabel("density")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
