#!/usr/bin/env python3
"""Plot the CSVs the clc-lqr binary writes.

Usage:
    python3 scripts/plot_results.py out/sweep.csv [out/learn_beta.csv ...]

The kind of plot is inferred from the header row:
  - sweep:      realized cost vs beta_1, one curve per a_true, with the
                exact optimum as a horizontal reference
  - learn-beta: beta_1 vs iteration, with the converged value as reference
  - baselines / compare: cost vs episodes (log x), one curve per (method, seed)

Dev tool only; the binary never plots.
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def plot_sweep(rows, out):
    fig, ax = plt.subplots(figsize=(6, 4))
    by_a = defaultdict(list)
    for r in rows:
        if r["status"] != "ok":
            continue
        by_a[float(r["a_true"])].append(
            (float(r["beta1"]), float(r["jr"]), float(r["riccati_optimal"]))
        )
    for a, pts in sorted(by_a.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"a_true = {a:g}")
        ax.axhline(pts[0][2], linestyle="--", linewidth=0.8, color="gray")
    ax.set_xlabel(r"$\beta_1$")
    ax.set_ylabel(r"realized cost $J_r$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)


def plot_learn(rows, out):
    fig, ax = plt.subplots(figsize=(6, 4))
    its = [int(r["iteration"]) for r in rows]
    b1 = [float(r["beta_1"]) for r in rows]
    ax.plot(its, b1, marker="o", label=r"$\beta_1$")
    ax.axhline(-1.5, color="red", linewidth=1.2, label=r"$\beta_1^*$")
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\beta_1$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)


def plot_curves(rows, out):
    fig, ax = plt.subplots(figsize=(6, 4))
    cost_col = "best_jr" if "best_jr" in rows[0] else "greedy_jr"
    by_run = defaultdict(list)
    for r in rows:
        by_run[(r["method"], r["seed"])].append(
            (int(r["episodes"]), float(r[cost_col]))
        )
    seen = set()
    for (method, _seed), pts in sorted(by_run.items()):
        pts.sort()
        label = method if method not in seen else None
        seen.add(method)
        ax.plot(
            [p[0] for p in pts], [p[1] for p in pts], label=label, alpha=0.7,
            color=f"C{sorted(seen).index(method)}",
        )
    ax.axhline(float(rows[0]["riccati_optimal"]), linestyle="--", color="gray")
    ax.set_xscale("log")
    ax.set_xlabel("real-system episodes")
    ax.set_ylabel(r"cost $J_r$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)


def main():
    if len(sys.argv) < 2:
        print(__doc__)
        return 1
    for arg in sys.argv[1:]:
        rows = load(arg)
        if not rows:
            print(f"{arg}: empty")
            continue
        out = str(Path(arg).with_suffix(".png"))
        header = set(rows[0])
        if "beta1" in header:
            plot_sweep(rows, out)
        elif "beta_1" in header:
            plot_learn(rows, out)
        elif "episodes" in header:
            plot_curves(rows, out)
        else:
            print(f"{arg}: unrecognized schema {sorted(header)}")
            continue
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
