"""Run the full experiment grid and print the per-cell means.

    python scripts/run_grid.py --out results [--replications 10] [--seed 1]

Writes the same files as ``copycat --grid``.
"""
import argparse
import csv
import os
import sys
import time

from copycat.cli import main as cli_main


def show(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'scenario':<16}{'n':>3}{'app_pdr':>10}{'pdr':>9}{'ae2ed_s':>10}{'apc_mw':>9}")
    for r in rows:
        print(f"{r['scenario']:<16}{r['n']:>3}{float(r['app_pdr_mean']):>10.3f}{float(r['pdr_mean']):>9.3f}"
              f"{float(r['ae2ed_s_mean']):>10.3f}{float(r['apc_mw_mean']):>9.3f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--replications", type=int, default=10)
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    argv = ["--grid", "--out", a.out, "--seed", str(a.seed), "--replications", str(a.replications),
            "--workers", str(a.workers)]
    if a.config:
        argv += ["--config", a.config]
    t0 = time.perf_counter()
    code = cli_main(argv)
    print(f"grid finished in {time.perf_counter() - t0:.0f} s (exit {code})", file=sys.stderr)
    if code == 0:
        show(os.path.join(a.out, "summary_ci.csv"))
    sys.exit(code)
