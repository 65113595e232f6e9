from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import List, Optional

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import FormatError
from .results_analyzer import (
    FIG1_FIELDS,
    FIG2_FIELDS,
    analyze_fig1_csv,
    analyze_fig2_csv,
)
from .spec_store import atomic_write


def _save_svg(fig: Figure, out_path: Path) -> Path:
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", bbox_inches="tight")
    return atomic_write(out_path, buf.getvalue())


def _header(csv_path: Path) -> List[str]:
    with Path(csv_path).open(newline="", encoding="utf-8") as f:
        return next(csv.reader(f), [])


def plot_fig1(csv_path: Path, out_path: Path) -> Path:
    """Scatter of generalization gap against weight Lipschitz constant."""
    with Path(csv_path).open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    analysis = analyze_fig1_csv(csv_path)

    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    for flag, label, marker in (("1", "A, B trained", "o"), ("0", "A, B frozen", "^")):
        pts = [r for r in rows if r["projections_trained"] == flag]
        if pts:
            ax.scatter(
                [float(r["weight_lipschitz"]) for r in pts],
                [float(r["gap"]) for r in pts],
                s=14,
                marker=marker,
                alpha=0.7,
                label=label,
            )
    ax.set_xlabel(r"$\max_k \|W_{k+1} - W_k\|_\infty$")
    ax.set_ylabel("generalization gap (test - train loss)")
    r = analysis["correlation"]
    title = "weight Lipschitz constant vs gap"
    ax.set_title(title if math.isnan(r) else f"{title} (r = {r:.3f})")
    ax.legend(loc="best", fontsize="small")
    ax.grid(alpha=0.3)
    return _save_svg(fig, out_path)


def plot_fig2(csv_path: Path, out_path: Path) -> Path:
    """Mean gap with one-standard-deviation bars for every lambda."""
    summary = analyze_fig2_csv(csv_path)["summary"]
    labels = ["inf" if math.isinf(s["lambda"]) else f"{s['lambda']:g}" for s in summary]

    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    xs = list(range(len(summary)))
    ax.errorbar(
        xs,
        [s["mean_gap"] for s in summary],
        yerr=[s["std_gap"] for s in summary],
        fmt="o-",
        capsize=4,
    )
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_xlabel(r"penalty factor $\lambda$ (inf = weight-tied)")
    ax.set_ylabel("generalization gap (test - train loss)")
    ax.set_title("generalization gap vs penalty factor")
    ax.grid(alpha=0.3)
    return _save_svg(fig, out_path)


def render_plot(csv_path: Path, out_path: Optional[Path] = None) -> Path:
    """Pick the plot from the CSV header; default output is ``<csv>.svg``."""
    csv_path = Path(csv_path)
    out = Path(out_path) if out_path else csv_path.with_suffix(".svg")
    header = _header(csv_path)
    if header == FIG1_FIELDS:
        return plot_fig1(csv_path, out)
    if header == FIG2_FIELDS:
        return plot_fig2(csv_path, out)
    raise FormatError(
        f"{csv_path.name}: not an experiment table (header {header})",
        expected=[FIG1_FIELDS, FIG2_FIELDS],
        found=header,
        offset=0,
    )
