"""Figure rendering from results tables."""

from __future__ import annotations

import csv

from hintsr.evaluation import RESULT_HEADER
from hintsr.report import load_rows, render_report


def write_results(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_HEADER)
        writer.writerows(rows)


def test_render_report_writes_figures(tmp_path):
    results = tmp_path / "results.csv"
    rows = []
    for seed in (0, 1):
        for rho in (0.0, 0.01, 0.1):
            for preset in ("vanilla", "all"):
                base = 0.9 if preset == "all" else 0.7
                rows.append(["toy", preset, "5", f"{rho}", "0",
                             "r2_mean.conditioned", f"{base - rho - 0.01 * seed}",
                             str(seed)])
                rows.append(["toy", preset, "5", f"{rho}", "0",
                             "is_correct.conditioned", f"{base - 0.2}", str(seed)])
    write_results(results, rows)
    pngs = render_report(results)
    names = {p.name for p in pngs}
    assert names == {"r2_mean.png", "is_correct.png"}
    for p in pngs:
        assert p.parent == tmp_path
        assert p.stat().st_size > 1000


def test_render_report_preset_axis(tmp_path):
    """Without a swept numeric column the presets become the x axis."""
    results = tmp_path / "results.csv"
    rows = [
        ["toy", preset, "5", "0", "0", "is_correct.conditioned", v, "0"]
        for preset, v in (("vanilla", "0.4"), ("all", "0.8"))
    ]
    write_results(results, rows)
    pngs = render_report(results)
    assert [p.name for p in pngs] == ["is_correct.png"]


def test_render_report_out_dir_override(tmp_path):
    results = tmp_path / "results.csv"
    write_results(results, [
        ["toy", "vanilla", "2", "0", "0", "r2_mean.conditioned", "0.5", "0"],
        ["toy", "vanilla", "4", "0", "0", "r2_mean.conditioned", "0.6", "0"],
    ])
    out = tmp_path / "figs"
    pngs = render_report(results, out_dir=out)
    assert all(p.parent == out for p in pngs)


def test_load_rows_types(tmp_path):
    results = tmp_path / "results.csv"
    write_results(results, [
        ["toy", "vanilla", "5", "0.01", "32", "r2_mean.conditioned", "0.25", "3"],
    ])
    (row,) = load_rows(results)
    assert row["beam"] == 5 and row["seed"] == 3
    assert abs(row["rho"] - 0.01) < 1e-12 and abs(row["value"] - 0.25) < 1e-12
    assert row["preset"] == "vanilla"
