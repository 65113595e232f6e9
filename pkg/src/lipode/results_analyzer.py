from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

FIG1_FIELDS = ["run", "epoch", "weight_lipschitz", "gap", "projections_trained"]
FIG2_FIELDS = ["lambda", "repeat", "gap"]
FIG2_SUMMARY_FIELDS = ["lambda", "mean_gap", "std_gap", "count"]


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation, NaN with fewer than two points or a constant side."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    if a.size < 2 or np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return math.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.pearsonr(a, b)[0])


def _read_rows(
    path: Path, analysis: Dict[str, Any]
) -> Optional[List[Dict[str, str]]]:
    if not path.exists():
        analysis["status"] = "MISSING"
        return None
    try:
        with path.open(newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            rows = list(reader)
            header = reader.fieldnames or []
    except (OSError, csv.Error) as e:
        analysis["status"] = f"READ ERROR: {type(e).__name__}"
        return None
    analysis["header"] = list(header)
    if not rows:
        analysis["status"] = "EMPTY"
        return None
    return rows


def _column(rows: List[Dict[str, str]], name: str) -> np.ndarray:
    return np.array([float(r[name]) for r in rows], dtype=np.float64)


def analyze_fig1_csv(csv_path: Path) -> Dict[str, Any]:
    """Row counts and weight-Lipschitz/gap correlations of a fig1 table."""
    analysis: Dict[str, Any] = {
        "rows": 0,
        "runs": 0,
        "epochs": 0,
        "correlation": math.nan,
        "settings": {},
        "status": "UNKNOWN",
    }
    rows = _read_rows(Path(csv_path), analysis)
    if rows is None:
        return analysis
    if analysis["header"] != FIG1_FIELDS:
        analysis["status"] = "BAD HEADER"
        return analysis

    analysis["rows"] = len(rows)
    analysis["runs"] = len({r["run"] for r in rows})
    analysis["epochs"] = len({r["epoch"] for r in rows})
    lip = _column(rows, "weight_lipschitz")
    gap = _column(rows, "gap")
    analysis["correlation"] = pearson(lip, gap)

    trained = _column(rows, "projections_trained")
    for flag, label in ((1.0, "trained"), (0.0, "frozen")):
        mask = trained == flag
        if mask.any():
            analysis["settings"][label] = {
                "rows": int(mask.sum()),
                "correlation": pearson(lip[mask], gap[mask]),
            }

    r = analysis["correlation"]
    if math.isnan(r):
        analysis["status"] = "UNDEFINED"
    else:
        analysis["status"] = "POSITIVE" if r > 0 else "NON-POSITIVE"
    return analysis


def summarize_gaps(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, float]]:
    """Per-lambda mean and sample standard deviation, lambdas ascending."""
    groups: Dict[float, List[float]] = {}
    for r in rows:
        groups.setdefault(float(r["lambda"]), []).append(float(r["gap"]))
    out = []
    for lam in sorted(groups):
        g = np.asarray(groups[lam])
        out.append(
            {
                "lambda": lam,
                "mean_gap": float(g.mean()),
                "std_gap": float(g.std(ddof=1)) if g.size > 1 else 0.0,
                "count": int(g.size),
            }
        )
    return out


def analyze_fig2_csv(csv_path: Path) -> Dict[str, Any]:
    """Per-lambda gap summary of a fig2 table and whether penalizing helped."""
    analysis: Dict[str, Any] = {
        "rows": 0,
        "lambdas": [],
        "summary": [],
        "best_finite_lambda": None,
        "status": "UNKNOWN",
    }
    rows = _read_rows(Path(csv_path), analysis)
    if rows is None:
        return analysis
    if analysis["header"] != FIG2_FIELDS:
        analysis["status"] = "BAD HEADER"
        return analysis

    analysis["rows"] = len(rows)
    summary = summarize_gaps(rows)
    analysis["summary"] = summary
    analysis["lambdas"] = [s["lambda"] for s in summary]

    means = {s["lambda"]: s["mean_gap"] for s in summary}
    penalized = [lam for lam in means if 0.0 < lam < math.inf]
    if penalized:
        analysis["best_finite_lambda"] = min(penalized, key=lambda lam: means[lam])
    if 0.0 not in means:
        analysis["status"] = "NO BASELINE"
        return analysis

    # best finite lambda and the weight-tied run, each against lambda = 0
    candidates = (analysis["best_finite_lambda"], math.inf)
    compared = [means[lam] for lam in candidates if lam in means]
    if not compared:
        analysis["status"] = "NO PENALTY"
    elif all(m <= means[0.0] for m in compared):
        analysis["status"] = "REDUCED"
    else:
        analysis["status"] = "NOT REDUCED"
    return analysis
