#!/usr/bin/env python3
"""Render figures from sweep result CSVs.

Reads only the documented result schema
(swept_var,value,metric,std_err,n_trials,flags) and never recomputes any
metric.  Three figure kinds:

  ber   log-y bit error rate vs. the swept variable, one series per metric
  ee    dual axis vs. transmit power: capacity on the left y-axis,
        energy efficiency on the right y-axis
  band  capacity (and optionally BER from a second CSV) vs. bandwidth

Usage: plot.py --kind ber|ee|band --in <csv> [--in2 <csv>] --out <png>
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

EXPECTED_COLUMNS = ["swept_var", "value", "metric", "std_err", "n_trials", "flags"]


class PlotDataError(Exception):
    pass


def read_records(path):
    """Parse a result CSV; raises PlotDataError on schema problems."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotDataError(f"{path}: empty file")
        missing = [c for c in EXPECTED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise PlotDataError(f"{path}: missing columns {missing}")
        records = []
        for row in reader:
            records.append(
                {
                    "swept_var": float(row["swept_var"]),
                    "value": float(row["value"]),
                    "metric": row["metric"],
                    "std_err": float(row["std_err"]),
                    "n_trials": int(row["n_trials"]),
                    "flags": row["flags"],
                }
            )
    if not records:
        raise PlotDataError(f"{path}: no data rows")
    return records


def series_by_metric(records, prefix=None):
    """Group (x, y, err) triples per metric, sorted on x."""
    out = defaultdict(list)
    for rec in records:
        if prefix is None or rec["metric"].startswith(prefix):
            out[rec["metric"]].append((rec["swept_var"], rec["value"], rec["std_err"]))
    for pts in out.values():
        pts.sort()
    return dict(out)


def _plot_series(ax, series, marker="o"):
    for name in sorted(series):
        pts = series[name]
        ax.errorbar(
            [p[0] for p in pts],
            [p[1] for p in pts],
            yerr=[p[2] for p in pts],
            marker=marker,
            capsize=2,
            label=name,
        )


def render_ber(records, out_path, xlabel="loop length [m]"):
    series = series_by_metric(records, prefix="ber:")
    if not series:
        raise PlotDataError("no ber metrics in input")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    _plot_series(ax, series)
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_ee(records, out_path):
    caps = series_by_metric(records, prefix="capacity:")
    ees = series_by_metric(records, prefix="ee:")
    if not caps or not ees:
        raise PlotDataError("need both capacity and ee metrics for the dual-axis figure")
    fig, ax_cap = plt.subplots(figsize=(6.4, 4.2))
    ax_ee = ax_cap.twinx()
    _plot_series(ax_cap, {k: [(x, y / 1e6, e / 1e6) for x, y, e in v]
                          for k, v in caps.items()})
    _plot_series(ax_ee, {k: [(x, y / 1e6, e / 1e6) for x, y, e in v]
                         for k, v in ees.items()}, marker="s")
    ax_cap.set_xlabel("transmit power [dBm]")
    ax_cap.set_ylabel("capacity [Mbps]")
    ax_ee.set_ylabel("energy efficiency [Mb/J]")
    ax_cap.grid(True, alpha=0.3)
    h1, l1 = ax_cap.get_legend_handles_labels()
    h2, l2 = ax_ee.get_legend_handles_labels()
    ax_cap.legend(h1 + h2, l1 + l2, fontsize=8)
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_band(records, out_path, records2=None):
    caps = series_by_metric(records, prefix="capacity:")
    bers = series_by_metric(records, prefix="ber:")
    if records2 is not None:
        bers.update(series_by_metric(records2, prefix="ber:"))
        caps.update(series_by_metric(records2, prefix="capacity:"))
    if not caps and not bers:
        raise PlotDataError("no capacity or ber metrics in input")
    n_rows = (1 if caps else 0) + (1 if bers else 0)
    fig, axes = plt.subplots(n_rows, 1, figsize=(6.4, 3.2 * n_rows), squeeze=False)
    row = 0
    if caps:
        ax = axes[row][0]
        _plot_series(ax, {k: [(x, y / 1e6, e / 1e6) for x, y, e in v]
                          for k, v in caps.items()})
        ax.set_ylabel("capacity [Mbps]")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        row += 1
    if bers:
        ax = axes[row][0]
        _plot_series(ax, bers)
        ax.set_yscale("log")
        ax.set_ylabel("BER")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    axes[-1][0].set_xlabel("bandwidth [MHz]")
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render(kind, in_path, out_path, in2_path=None):
    records = read_records(in_path)
    if kind == "ber":
        render_ber(records, out_path)
    elif kind == "ee":
        render_ee(records, out_path)
    elif kind == "band":
        records2 = read_records(in2_path) if in2_path else None
        render_band(records, out_path, records2=records2)
    else:
        raise PlotDataError(f"unknown figure kind {kind!r}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kind", required=True, choices=["ber", "ee", "band"])
    parser.add_argument("--in", dest="in_path", required=True)
    parser.add_argument("--in2", dest="in2_path", default=None)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.in_path, args.out, in2_path=args.in2_path)
    except (PlotDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
