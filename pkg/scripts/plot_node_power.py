"""Stacked per-state power of one node over time, one panel per variant.

    python scripts/plot_node_power.py results/node_power.csv --node 2 --interval 1 -o node2.png

Needs matplotlib (``pip install -e .[plot]``).
"""
import argparse
import csv
from collections import defaultdict

STATES = ("cpu_mw", "lpm_mw", "tx_mw", "rx_mw")


def load(path, node, interval):
    # variant -> bin start -> per-state lists over seeds
    data = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if int(r["node_id"]) != node:
                continue
            if r["variant"] != "NONE" and float(r["interval_s"]) != interval:
                continue
            for s in STATES:
                data[r["variant"]][float(r["bin_start_s"])][s].append(float(r[s]))
    return data


if __name__ == "__main__":
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--node", type=int, default=2)
    ap.add_argument("--interval", type=float, default=1.0)
    ap.add_argument("-o", "--output", default="node_power.png")
    a = ap.parse_args()
    data = load(a.csv, a.node, a.interval)
    fig, axes = plt.subplots(1, len(data), figsize=(5 * len(data), 3.5), sharey=True, squeeze=False)
    for ax, variant in zip(axes[0], sorted(data)):
        bins = sorted(data[variant])
        stacks = [[sum(data[variant][b][s]) / len(data[variant][b][s]) for b in bins] for s in STATES]
        ax.stackplot(bins, stacks, labels=[s[:-3].upper() for s in STATES])
        ax.set_title(variant)
        ax.set_xlabel("time (s)")
    axes[0][0].set_ylabel(f"node {a.node} power (mW)")
    axes[0][-1].legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(a.output, dpi=120)
    print(f"wrote {a.output}")
