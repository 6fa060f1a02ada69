"""Render figures from the CSV files written by ``supkde``.

    python3 scripts/plot_outputs.py rates.csv rates.png        # risk vs n/ln n, log-log
    python3 scripts/plot_outputs.py replicates.csv errors.png  # per-replicate errors
    python3 scripts/plot_outputs.py fit.csv density.png        # fitted block tables

The kind is detected from the CSV header. Needs matplotlib (``pip install .[plots]``).
"""

import csv
import math
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_rates(rows, ax):
    n = [float(r["n"]) for r in rows]
    x = [v / math.log(v) for v in n]
    y = [float(r["risk"]) for r in rows]
    err = [2 * float(r["stderr"]) for r in rows]
    ax.errorbar(x, y, yerr=err, marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n / ln n")
    ax.set_ylabel("sup-norm risk")


def plot_replicates(rows, ax):
    err = [float(r["error"]) for r in rows]
    ax.plot(range(1, len(err) + 1), err, "o", label="selected")
    if rows and rows[0].get("best_error"):
        ax.plot(range(1, len(err) + 1), [float(r["best_error"]) for r in rows], "x", label="best candidate")
        ax.legend()
    ax.set_xlabel("replicate")
    ax.set_ylabel("sup-norm error")


def plot_fit(rows, ax):
    by_block = defaultdict(list)
    for r in rows:
        by_block[r["block"]].append(r)
    for block, rs in by_block.items():
        coords = [k for k in rs[0] if k.startswith("x") and rs[0][k] != ""]
        if len(coords) == 1:
            pts = sorted((float(r[coords[0]]), float(r["value"])) for r in rs)
            ax.plot(*zip(*pts), label=f"block {block}")
    ax.set_xlabel("x")
    ax.set_ylabel("block marginal estimate")
    ax.legend()


def main(src, dst):
    rows = _rows(src)
    if not rows:
        raise SystemExit(f"{src}: no rows")
    header = rows[0].keys()
    fig, ax = plt.subplots(figsize=(6, 4))
    if "risk" in header:
        plot_rates(rows, ax)
    elif "error" in header:
        plot_replicates(rows, ax)
    elif "block" in header:
        plot_fit(rows, ax)
    else:
        raise SystemExit(f"{src}: unrecognised columns {list(header)}")
    fig.tight_layout()
    fig.savefig(dst, dpi=120)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    main(sys.argv[1], sys.argv[2])
