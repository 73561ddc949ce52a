"""Recompute experiment medians from the raw per-cell CSV traces.

Reads every ``grid*/<cell>.csv`` under an experiment output directory,
recomputes the lower median across trials at each recorded iteration and
compares the result with ``medians.csv`` and ``summary.csv``.  Exits 1 on
any mismatch.

    python scripts/recompute_summary.py results/
"""
import argparse
import csv
import re
import statistics
import sys
from collections import defaultdict
from pathlib import Path

CELL_RE = re.compile(r"(?P<variant>[A-Z]+)_q(?P<q>.+)\.csv$")
GRID_RE = re.compile(r"grid(?P<g>\d+)_bt.+")


def read_trace(path):
    """{iter: [rel_error per trial]} and {iter: [rel_residual per trial]}."""
    errs, ress = defaultdict(list), defaultdict(list)
    with open(path, newline="") as f:
        rows = csv.DictReader(line for line in f if not line.startswith("#"))
        for row in rows:
            k = int(row["iter"])
            errs[k].append(float(row["rel_error"]))
            ress[k].append(float(row["rel_residual"]))
    return errs, ress


def recompute(outdir):
    """{(grid, variant, q): {iter: (median error, median residual)}}."""
    table = {}
    for gdir in sorted(Path(outdir).iterdir()):
        gm = GRID_RE.fullmatch(gdir.name)
        if not (gdir.is_dir() and gm):
            continue
        for path in sorted(gdir.glob("*.csv")):
            cm = CELL_RE.fullmatch(path.name)
            if not cm:
                continue
            errs, ress = read_trace(path)
            key = (int(gm["g"]), cm["variant"], float(cm["q"]))
            table[key] = {
                k: (statistics.median_low(errs[k]), statistics.median_low(ress[k])) for k in sorted(errs)
            }
    return table


def compare(outdir):
    table = recompute(outdir)
    problems = []
    seen = set()
    with open(Path(outdir) / "medians.csv", newline="") as f:
        for row in csv.DictReader(f):
            key = (int(row["grid"]), row["variant"], float(row["q"]))
            k = int(row["iter"])
            got = table.get(key, {}).get(k)
            want = (float(row["median_rel_error"]), float(row["median_rel_residual"]))
            if got != want:
                problems.append(f"medians {key} iter {k}: emitted {want}, recomputed {got}")
            seen.add((key, k))
    for key, per_iter in table.items():
        for k in per_iter:
            if (key, k) not in seen:
                problems.append(f"medians {key} iter {k}: missing from medians.csv")
    with open(Path(outdir) / "summary.csv", newline="") as f:
        for row in csv.DictReader(f):
            key = (int(row["grid"]), row["variant"], float(row["q"]))
            if not row["final_median_rel_error"]:
                continue
            per_iter = table.get(key)
            final = per_iter[max(per_iter)][0] if per_iter else None
            if final != float(row["final_median_rel_error"]):
                problems.append(f"summary {key}: emitted {row['final_median_rel_error']}, recomputed {final}")
    return problems


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("outdir")
    args = parser.parse_args(argv)
    problems = compare(args.outdir)
    for p in problems:
        print(p)
    print("summary matches raw traces" if not problems else f"{len(problems)} mismatches")
    return 1 if problems else 0


if __name__ == "__main__":
    sys.exit(main())
