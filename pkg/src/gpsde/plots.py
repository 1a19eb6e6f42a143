"""Figure rendering for the CLI report path.

Each helper writes a PNG next to the delimited output it illustrates. All
figures use the Agg backend so they work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_MAX_DIMS_SHOWN = 6


def plot_moments(times, means, variances, path, title="Propagated moments"):
    """Mean lines with +-2 std bands, one panel per state dimension."""
    means = np.asarray(means)
    variances = np.asarray(variances)
    d = min(means.shape[1], _MAX_DIMS_SHOWN)
    fig, axes = plt.subplots(d, 1, figsize=(7, 2.2 * d), sharex=True, squeeze=False)
    for a in range(d):
        ax = axes[a, 0]
        m = means[:, a]
        s = np.sqrt(np.clip(variances[:, a], 0, None))
        ax.plot(times, m, color="C0", lw=1.5)
        ax.fill_between(times, m - 2 * s, m + 2 * s, color="C0", alpha=0.25, lw=0)
        ax.set_ylabel(f"z_{a + 1}")
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_density(spec, values, path, title="Grid density"):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if spec.dim == 1:
        ax.plot(spec.axes()[0], values, color="C0")
        ax.set_xlabel("z")
        ax.set_ylabel("p(z)")
    else:
        z1, z2 = spec.axes()
        grid = values.reshape(spec.n)
        pcm = ax.pcolormesh(z1, z2, grid.T, shading="auto", cmap="viridis")
        fig.colorbar(pcm, ax=ax, label="p(z)")
        ax.set_xlabel("z_1")
        ax.set_ylabel("z_2")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_field(points, means, stds, path, observations=None, title="Posterior velocity field"):
    """Quiver of the posterior mean field (2-D only) with optional data arrows."""
    points = np.asarray(points)
    means = np.asarray(means)
    fig, ax = plt.subplots(figsize=(6, 6))
    mag = np.linalg.norm(np.asarray(stds), axis=1)
    ax.quiver(points[:, 0], points[:, 1], means[:, 0], means[:, 1],
              mag, cmap="Blues_r", width=0.003)
    if observations is not None:
        ax.quiver(observations.inputs[:, 0], observations.inputs[:, 1],
                  observations.derivatives[:, 0], observations.derivatives[:, 1],
                  color="red", width=0.006)
    ax.set_xlabel("z_1")
    ax.set_ylabel("z_2")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bench(rows, path, title="Wall-clock by method"):
    """Grouped bars of wall time per method for each dimensionality."""
    dims = sorted({r["d"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / len(methods)
    for k, meth in enumerate(methods):
        xs, ys = [], []
        for i, d in enumerate(dims):
            for r in rows:
                if r["d"] == d and r["method"] == meth:
                    xs.append(i + k * width)
                    ys.append(r["wall_ms"])
        ax.bar(xs, ys, width=width, label=meth)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(dims))])
    ax.set_xticklabels([str(d) for d in dims])
    ax.set_xlabel("state dimension d")
    ax.set_ylabel("wall time [ms]")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_paths(paths_by_label, path, title="Sampled trajectories"):
    """Overlay 2-D trajectories; paths_by_label maps label -> list of (T, d) arrays."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for k, (label, trajs) in enumerate(paths_by_label.items()):
        for i, tr in enumerate(trajs):
            tr = np.asarray(tr)
            ax.plot(tr[:, 0], tr[:, 1], color=f"C{k}", alpha=0.6,
                    label=label if i == 0 else None)
    ax.set_xlabel("z_1")
    ax.set_ylabel("z_2")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
