"""Report figures.

Every function draws onto a fresh figure, writes PNG bytes to ``path``
(a filename or binary file object) and closes it.  The Agg backend is
forced so figures render headless, and PNG metadata is pinned so that
identical inputs give identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["spectrum_plot", "radial_cdf_plot", "covariance_plot", "packing_plot",
           "dyson_plot"]

_RC = {
    "figure.figsize": (5.0, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
}
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_META)
    plt.close(fig)


def spectrum_plot(eigenvalues, r_theory, path, title=""):
    """Eigenvalues in the complex plane with the predicted disk boundary."""
    ev = np.asarray(eigenvalues)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.scatter(ev.real, ev.imag, s=3, alpha=0.6, lw=0)
        t = np.linspace(0, 2 * np.pi, 400)
        ax.plot(r_theory * np.cos(t), r_theory * np.sin(t), "k--", lw=1,
                label=f"r = {r_theory:.4f}")
        ax.set_aspect("equal")
        ax.set_xlabel("Re")
        ax.set_ylabel("Im")
        ax.legend(loc="upper right")
        if title:
            ax.set_title(title)
        _save(fig, path)


def radial_cdf_plot(radii_sorted, r_theory, path, title=""):
    """Empirical radial CDF against ``min(1, (r / r_theory)^2)``."""
    r = np.asarray(radii_sorted, dtype=float)
    k = len(r)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.step(r, np.arange(1, k + 1) / k, where="post", label="empirical")
        grid = np.linspace(0, max(r.max(), r_theory) * 1.05, 400)
        ax.plot(grid, np.minimum(1.0, (grid / r_theory) ** 2), "k--", lw=1, label="uniform disk")
        ax.set_xlabel("|lambda|")
        ax.set_ylabel("F(r)")
        ax.legend(loc="lower right")
        if title:
            ax.set_title(title)
        _save(fig, path)


def covariance_plot(means, targets, path, title=""):
    """Recovered cell kernel next to its exact expectation."""
    means = np.asarray(means, dtype=float)
    targets = np.asarray(targets, dtype=float)
    vmax = max(means.max(), targets.max(), 1e-12)
    with plt.rc_context({**_RC, "axes.grid": False, "figure.figsize": (8.0, 3.6)}):
        fig, axes = plt.subplots(1, 2)
        for ax, data, name in zip(axes, (means, targets), ("recovered", "target")):
            im = ax.imshow(data, vmin=0, vmax=vmax, cmap="viridis", interpolation="nearest")
            ax.set_title(name)
            ax.set_xlabel("j")
            ax.set_ylabel("i")
        fig.colorbar(im, ax=list(axes), shrink=0.8)
        if title:
            fig.suptitle(title)
        fig.savefig(path, format="png", metadata=_META)
        plt.close(fig)


def packing_plot(eps_grid, p_hat, k_hat, path, slope=None, title=""):
    """Packing and covering counts on log-log axes."""
    eps = np.asarray(eps_grid, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.loglog(eps, p_hat, "o-", label="greedy packing")
        ax.loglog(eps, k_hat, "s--", label="greedy cover")
        ax.set_xlabel("eps")
        ax.set_ylabel("count")
        label = title
        if slope is not None:
            label = f"{title}  slope {slope:.3f}".strip()
        if label:
            ax.set_title(label)
        ax.legend()
        _save(fig, path)


def dyson_plot(log_densities, path, title=""):
    """Histogram of log-density values over trials."""
    vals = np.asarray(log_densities, dtype=float)
    vals = vals[np.isfinite(vals)]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.hist(vals, bins=max(1, min(30, len(vals))))
        ax.set_xlabel("log density")
        ax.set_ylabel("trials")
        if title:
            ax.set_title(title)
        _save(fig, path)
