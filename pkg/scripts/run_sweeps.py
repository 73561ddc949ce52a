"""Run the experiment configs under configs/ and check each summary.

    python scripts/run_sweeps.py                     # every experiment config
    python scripts/run_sweeps.py configs/compare.cfg --trials 5

Each run is followed by the independent median recomputation in
recompute_summary.py; the script exits non-zero if any check fails.
"""
import argparse
import sys
import time
from pathlib import Path

from qtrk.harness import ExperimentConfig, run_experiment

sys.path.insert(0, str(Path(__file__).resolve().parent))
from recompute_summary import compare  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("configs", nargs="*")
    parser.add_argument("--trials", type=int, help="override the trial count")
    parser.add_argument("--workers", type=int, help="override the worker count")
    args = parser.parse_args(argv)
    paths = args.configs or sorted(str(p) for p in (ROOT / "configs").glob("*.cfg") if "deblur" not in p.name)
    failed = 0
    for path in paths:
        cfg = ExperimentConfig.from_file(path)
        if args.trials:
            cfg.trials = args.trials
        if args.workers:
            cfg.workers = args.workers
        start = time.monotonic()
        table = run_experiment(cfg)
        problems = compare(cfg.output)
        failed += bool(problems)
        print(f"{path}: {len(table.final_median)} cells in {time.monotonic() - start:.1f} s -> {cfg.output}"
              f" ({'summary ok' if not problems else f'{len(problems)} summary mismatches'})")
        for (g, c), fm in sorted(table.final_median.items()):
            variant, q = cfg.cells[c]
            bt, br = cfg.grid[g]
            print(f"  beta~={bt:<6} beta_row~={br:<4} {variant.value:<6} q={q:<6} "
                  f"final median {fm if fm is None else f'{fm:.2e}'}  stall rate {table.stall_rate[g, c]}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
