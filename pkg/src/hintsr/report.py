"""Figure rendering for experiment result tables.

Reads the long-format results CSV written by the experiment harness and
renders one PNG per metric into the same directory (or a chosen one), so a
sweep leaves both machine-readable rows and human-readable plots behind.
Rendering is headless; nothing here touches a display.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load_rows(path: Path | str) -> list[dict]:
    """Rows of a results table as dicts with numeric fields parsed."""
    out: list[dict] = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "dataset": row["dataset"],
                    "preset": row["preset"],
                    "beam": int(row["beam"]),
                    "rho": float(row["rho"]),
                    "n_points": int(row["n_points"]),
                    "metric": row["metric"],
                    "value": float(row["value"]),
                    "seed": int(row["seed"]),
                }
            )
    return out


def _sweep_axis(rows: list[dict]) -> str:
    """Pick the varying column to plot against (rho > beam > n_points)."""
    for axis in ("rho", "beam", "n_points"):
        if len({r[axis] for r in rows}) > 1:
            return axis
    return "preset"


def _series_label(preset: str, metric: str) -> str:
    suffix = metric.split(".", 1)[1] if "." in metric else ""
    return f"{preset}/{suffix}" if suffix else preset


def render_report(results_csv: Path | str, out_dir: Path | str | None = None) -> list[Path]:
    """One PNG per metric family, mean over seeds with a std band."""
    results_csv = Path(results_csv)
    rows = load_rows(results_csv)
    target = Path(out_dir) if out_dir is not None else results_csv.parent
    target.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []

    by_metric: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        base = r["metric"].split(".", 1)[0]
        by_metric[base].append(r)

    written: list[Path] = []
    for base, metric_rows in sorted(by_metric.items()):
        axis = _sweep_axis(metric_rows)
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        groups: dict[tuple[str, str], dict[object, list[float]]] = defaultdict(
            lambda: defaultdict(list)
        )
        for r in metric_rows:
            key = (r["preset"], r["metric"])
            x = r[axis] if axis != "preset" else r["preset"]
            groups[key][x].append(r["value"])
        if axis == "preset":
            labels = []
            means = []
            stds = []
            for (preset, metric), by_x in sorted(groups.items()):
                vals = [v for series in by_x.values() for v in series]
                labels.append(_series_label(preset, metric))
                means.append(float(np.mean(vals)))
                stds.append(float(np.std(vals)))
            pos = np.arange(len(labels))
            ax.bar(pos, means, yerr=stds, capsize=3)
            ax.set_xticks(pos)
            ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        else:
            for (preset, metric), by_x in sorted(groups.items()):
                xs = sorted(by_x)
                mean = [float(np.mean(by_x[x])) for x in xs]
                std = [float(np.std(by_x[x])) for x in xs]
                ax.errorbar(xs, mean, yerr=std, marker="o", capsize=3,
                            label=_series_label(preset, metric))
            if base.startswith("r2"):
                ax.set_ylim(top=1.05)
            ax.set_xlabel(axis)
            ax.legend(fontsize=8)
        ax.set_ylabel(base)
        ax.set_title(f"{base} ({metric_rows[0]['dataset']})")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = target / f"{base}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written
