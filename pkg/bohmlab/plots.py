"""SVG plots: trajectory fan, density heat map, result histogram.

`matplotlib` is imported lazily so it stays an optional dependency.
SVGs are self-contained; text is embedded as paths.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from .core.ensemble import TrajectoryEnsemble
    from .core.measurement import ResultDistribution
    from .core.wavefield import DensityField

logger = logging.getLogger(__name__)

MAX_FAN = 500


def _pyplot() -> Any:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise ImportError("matplotlib package required: pip install 'bohmlab[plots]'") from e
    plt.rcParams["svg.fonttype"] = "path"
    plt.rcParams["svg.hashsalt"] = "bohmlab"
    return plt


def _save(fig: Any, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    _pyplot().close(fig)
    logger.info("Wrote %s", path)
    return path


def plot_trajectory_fan(ensemble: TrajectoryEnsemble, path: str | Path, *, axes: tuple[int, int] = (0, 1)) -> Path:
    """Unwrapped paths in the (axes[0], axes[1]) plane; 1D ensembles plot q against t."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 5))
    for tr in ensemble.trajectories[:MAX_FAN]:
        q = tr.unwrapped
        if q.shape[1] == 1:
            ax.plot(tr.times, q[:, 0], lw=0.5, color="tab:blue", alpha=0.6)
        else:
            ax.plot(q[:, axes[0]], q[:, axes[1]], lw=0.5, color="tab:blue", alpha=0.6)
    dims = ensemble.trajectories[0].positions.shape[1] if ensemble.trajectories else 1
    ax.set_xlabel("t" if dims == 1 else f"q{axes[0]}")
    ax.set_ylabel("q0" if dims == 1 else f"q{axes[1]}")
    ax.set_title(f"{ensemble.scenario_id}: {len(ensemble)} trajectories")
    return _save(fig, Path(path))


def plot_density(d: DensityField, path: str | Path, *, title: str = "") -> Path:
    """Heat map of a 2D density (marginalized to the first two axes), line plot in 1D."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 5))
    grid = d.grid
    if grid.dims == 1:
        ax.plot(grid.coords(0), d.values, color="tab:blue")
        ax.set_xlabel("q0")
        ax.set_ylabel("density")
    else:
        values = d.values if grid.dims == 2 else d.values.sum(axis=tuple(range(2, grid.dims)))
        extent = (grid.axes[0].lo, grid.axes[0].hi, grid.axes[1].lo, grid.axes[1].hi)
        img = ax.imshow(np.asarray(values).T, origin="lower", extent=extent, aspect="auto", cmap="viridis")
        fig.colorbar(img, ax=ax)
        ax.set_xlabel("q0")
        ax.set_ylabel("q1")
    ax.set_title(title)
    return _save(fig, Path(path))


def plot_results(distributions: list[ResultDistribution], path: str | Path) -> Path:
    """Side-by-side bars of each distribution's bin masses."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    if distributions:
        bins = distributions[0].bins
        width = 0.8 / len(distributions)
        x = np.arange(len(bins))
        for k, dist in enumerate(distributions):
            ax.bar(x + k * width, dist.masses, width, label=dist.method.value)
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(bins)
        ax.legend()
    ax.set_ylabel("probability")
    return _save(fig, Path(path))
