"""Static figure rendering for experiment outputs.

Every function writes a PNG next to the delimited results and returns the
path.  The non-interactive backend is forced so figures render identically
in headless runs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import ConvergenceTrace, RuntimeGrid, SweepResult

_FIGSIZE = (6.0, 4.0)
_DPI = 150

_METHOD_LABELS = {
    "ours": "factor model",
    "one_matrix": "one matrix",
    "k_matrices": "K matrices",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_error_vs_n(sweep: SweepResult, path) -> Path:
    """Median test error per method as a function of training-set size."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    medians = sweep.medians()
    for method in sweep.methods:
        label = _METHOD_LABELS.get(method, method)
        ax.plot(sweep.n_values, medians[method], marker="o", label=label)
        xs = [c.n for c in sweep.cells if c.method == method]
        ys = [c.test_error for c in sweep.cells if c.method == method]
        ax.scatter(xs, ys, s=8, alpha=0.3)
    ax.set_xlabel("training observations n")
    ax.set_ylabel("test prediction error")
    topics = "known topics" if sweep.known_topics else "estimated topics"
    ax.set_title(f"p={sweep.p}, K={sweep.K}, {sweep.kind}, {topics}")
    ax.legend()
    return _save(fig, path)


def plot_runtime_grid(grid: RuntimeGrid, path) -> Path:
    """Per-iteration fit time across the (p, K) grid."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for p in grid.p_values:
        ys = [grid.seconds_per_iter(p, K) for K in grid.K_values]
        ax.plot(grid.K_values, ys, marker="s", label=f"p={p}")
    ax.set_xlabel("topics K")
    ax.set_ylabel("seconds per iteration")
    ax.set_title(f"fit cost, n={grid.n}, T={grid.T}")
    ax.legend()
    return _save(fig, path)


def plot_convergence(trace: ConvergenceTrace, path) -> Path:
    """Distance-to-truth trajectory with its log-linear fit and plateau."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    t = np.arange(trace.dist_trace.size)
    ax.semilogy(t, trace.dist_trace, label="squared factor distance")
    if np.isfinite(trace.slope):
        window = trace.dist_trace > 10.0 * max(trace.plateau, 1e-300)
        tw = t[window]
        if tw.size:
            y0 = np.log(trace.dist_trace[window][0])
            ax.semilogy(
                tw,
                np.exp(y0 + trace.slope * (tw - tw[0])),
                "--",
                label=f"slope {trace.slope:.2e}/iter",
            )
    ax.axhline(trace.plateau, color="gray", ls=":", label="plateau")
    ax.set_xlabel("iteration")
    ax.set_ylabel("distance to truth")
    noise = "noiseless" if trace.noiseless else "noisy"
    ax.set_title(f"p={trace.p}, K={trace.K}, n={trace.n} ({noise})")
    ax.legend()
    return _save(fig, path)
