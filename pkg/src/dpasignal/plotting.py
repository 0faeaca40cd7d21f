"""Report figures: yearly trajectories of the strongest pairs, score
histograms and the lag weight kernel.  Figures are rendered off-screen with
the Agg canvas and written as PNG files."""

from __future__ import annotations

import math
import string
from pathlib import Path
from typing import Sequence

import matplotlib as mpl
import numpy as np
import pandas as pd
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .rating import RatingMatrix

STYLE = {
    "font.size": 8,
    "axes.labelsize": 8,
    "axes.titlesize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
}

# PNG metadata would otherwise carry the matplotlib version string
_PNG_META = {"Software": None}


def _new_figure(width: float, height: float) -> Figure:
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=_PNG_META)
    return path


def panel_labels(n: int, ncols: int = 4) -> list[str]:
    """Grid labels a1, a2, ... b1, ... (row letter, column number)."""
    return [f"{string.ascii_lowercase[i // ncols]}{i % ncols + 1}" for i in range(n)]


def top_pairs(series: Sequence[RatingMatrix], k: int) -> pd.DataFrame:
    """The ``k`` best pairs of the final year with their score in every year."""
    final = series[-1]
    drugs, conds, scores = final.ranking()
    drugs, conds, scores = drugs[:k], conds[:k], scores[:k]
    labels = panel_labels(len(drugs))
    df = pd.DataFrame({
        "rank": np.arange(1, len(drugs) + 1),
        "panel": labels,
        "drug_id": drugs,
        "condition_id": conds,
        "score": scores,
    })
    rows = np.searchsorted(final.drug_ids, drugs)
    cols = np.searchsorted(final.condition_ids, conds)
    for y, mat in enumerate(series, start=1):
        df[f"year_{y}"] = mat.scores[rows, cols]
    return df


def plot_trajectories(table: pd.DataFrame, path, ncols: int = 4) -> Path:
    years = [c for c in table.columns if c.startswith("year_")]
    x = np.arange(1, len(years) + 1)
    n = max(len(table), 1)
    nrows = math.ceil(n / ncols)
    with mpl.rc_context(STYLE):
        fig = _new_figure(2.2 * ncols, 1.7 * nrows)
        axes = fig.subplots(nrows, ncols, squeeze=False)
        for i, ax in enumerate(axes.ravel()):
            if i >= len(table):
                ax.set_visible(False)
                continue
            row = table.iloc[i]
            ax.plot(x, row[years].to_numpy(dtype=float), marker="o", markersize=2.5)
            ax.set_title(f"{row['panel']}: drug {row['drug_id']} / cond {row['condition_id']}")
            ax.set_xticks(x)
        for ax in axes[-1]:
            ax.set_xlabel("year")
        for ax in axes[:, 0]:
            ax.set_ylabel("score")
        fig.tight_layout()
        return _save(fig, path)


def plot_histogram(matrix: RatingMatrix, path, bins: int = 60, tail_quantile: float = 0.95) -> Path:
    """Two panels: all present scores on a log scale, and the upper tail alone."""
    s = matrix.scores[matrix.present]
    with mpl.rc_context(STYLE):
        fig = _new_figure(8, 3)
        ax_all, ax_tail = fig.subplots(1, 2)
        if len(s):
            shifted = np.log1p(s - s.min())
            ax_all.hist(shifted, bins=bins, color="0.4")
            cut = np.quantile(s, tail_quantile)
            ax_tail.hist(s[s >= cut], bins=bins, color="0.4")
            ax_tail.set_title(f"scores above the {tail_quantile:.0%} quantile")
        ax_all.set_xlabel("log(1 + score - min)")
        ax_all.set_ylabel("pairs")
        ax_all.set_yscale("log")
        ax_tail.set_xlabel("score")
        fig.tight_layout()
        return _save(fig, path)


def plot_kernel(kernel, path) -> Path:
    lags = np.linspace(-2, kernel.delta + 5, 600)
    with mpl.rc_context(STYLE):
        fig = _new_figure(4, 2.6)
        ax = fig.subplots()
        ax.plot(lags, kernel.weights(lags).astype(float), color="k")
        ax.set_xlabel("days from era start")
        ax.set_ylabel("weight")
        ax.set_ylim(-0.05, 1.1)
        fig.tight_layout()
        return _save(fig, path)
