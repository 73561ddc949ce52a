"""Multi-trial experiment runner and config files.

Config files are flat ``key = value`` text, one key per line, ``#`` starts a
comment.  Unknown or repeated keys are errors.

Seeding: trial ``t`` uses ``seed_t = master XOR splitmix64(t)``.  Inside a
trial, independent streams are ``splitmix64(seed_t + k)`` with k = 1 for the
system (A, X*, X0), k = 2 for the solver and k = 10 + g for the corruption
plan of grid point g.  Every cell of a trial sees identical (A, B, X0) and the
same solver seed, so curves are directly comparable.
"""
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import deblur as db
from .corruption import MagnitudeLaw, apply, generate_plan, plan_from_counts
from .errors import ConfigError, DomainError, NumericalError
from .solvers import SolverConfig, Variant, make_rng, solve, write_records_csv
from .spectral import rate_report
from .tensor_core import read_t3b, tprod

MASK64 = (1 << 64) - 1


def splitmix64(x):
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master, t):
    return (master ^ splitmix64(t)) & MASK64


def substream(seed_t, k):
    return splitmix64((seed_t + k) & MASK64)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _cells(text):
    cells = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, q = item.partition(":")
        try:
            variant = Variant(name.strip().upper())
        except ValueError:
            raise ConfigError(f"unknown variant {name!r}") from None
        cells.append((variant, float(q) if q else 1.0))
    if not cells:
        raise ConfigError("no cells configured")
    return cells


def parse_kv(text, schema):
    """Parse ``key = value`` lines against ``schema`` {key: (converter, default)}."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        conv = schema[key][0]
        try:
            values[key] = conv(value.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    for key, (_, default) in schema.items():
        values.setdefault(key, default)
    return values


@dataclass
class ExperimentConfig:
    m: int = 25
    l: int = 5
    p: int = 4
    n: int = 10
    trials: int = 20
    iterations: int = 2000
    record_every: int = 1
    cells: list = field(default_factory=lambda: [(Variant.QTRK, 0.975), (Variant.TRK, 1.0)])
    beta_tilde: list = field(default_factory=lambda: [0.025])
    beta_row_tilde: list = field(default_factory=lambda: [0.2])
    law: MagnitudeLaw = field(default_factory=MagnitudeLaw)
    seed: int = 0
    output: str = "results"
    workers: int = 1

    SCHEMA = {
        "m": (int, 25),
        "l": (int, 5),
        "p": (int, 4),
        "n": (int, 10),
        "trials": (int, 20),
        "iterations": (int, 2000),
        "record_every": (int, 1),
        "cells": (_cells, None),
        "beta_tilde": (_floats, None),
        "beta_row_tilde": (_floats, None),
        "law": (MagnitudeLaw.parse, None),
        "seed": (int, 0),
        "output": (str, "results"),
        "workers": (int, 1),
    }

    def __post_init__(self):
        self.cells = [(Variant(v), float(q)) for v, q in self.cells]
        for name in ("m", "l", "p", "n", "trials", "iterations", "record_every", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for variant, q in self.cells:
            if not 0.0 < q <= 1.0:
                raise ConfigError(f"cell {variant.value}:{q}: q must lie in (0, 1]")
            if variant is not Variant.TRK and int(q * self.m * self.p * self.n + 1e-9) < 1:
                raise ConfigError(f"cell {variant.value}:{q}: quantile index zero")
        # surfaces non-integer corruption counts before any trial runs
        for bt, br in self.grid:
            generate_plan((self.m, self.p, self.n), bt, br, self.law, 0)

    @property
    def grid(self):
        return list(product(self.beta_tilde, self.beta_row_tilde))

    @classmethod
    def from_text(cls, text):
        vals = parse_kv(text, cls.SCHEMA)
        return cls(**{k: v for k, v in vals.items() if v is not None})

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_text(f.read())


def cell_name(variant, q):
    return f"{variant.value}_q{q!r}"


def grid_name(g, bt, br):
    return f"grid{g}_bt{bt!r}_br{br!r}"


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def make_system(cfg, seed_t):
    """Gaussian A, X*, X0 for one trial."""
    rng = make_rng(substream(seed_t, 1))
    A = rng.standard_normal((cfg.m, cfg.l, cfg.n))
    Xstar = rng.standard_normal((cfg.l, cfg.p, cfg.n))
    X0 = rng.standard_normal((cfg.l, cfg.p, cfg.n))
    return A, Xstar, X0


def make_plan(cfg, seed_t, g):
    bt, br = cfg.grid[g]
    return generate_plan((cfg.m, cfg.p, cfg.n), bt, br, cfg.law, substream(seed_t, 10 + g))


def run_trial(cfg, t):
    """Run every (grid point, cell) of trial ``t``.

    Returns ``{(g, c): RunRecord or error string}``, plan digests per grid
    point, and wall time per (g, c).
    """
    seed_t = trial_seed(cfg.seed, t)
    A, Xstar, X0 = make_system(cfg, seed_t)
    Bstar = tprod(A, Xstar)
    solver_seed = substream(seed_t, 2)
    results, digests, walls = {}, {}, {}
    for g in range(len(cfg.grid)):
        plan = make_plan(cfg, seed_t, g)
        digests[g] = plan.digest()
        B = apply(Bstar, plan)
        for c, (variant, q) in enumerate(cfg.cells):
            sc = SolverConfig(variant, q, cfg.iterations, solver_seed, cfg.record_every)
            start = time.monotonic()
            try:
                _, rec = solve(A, B, sc, Xstar=Xstar, X0=X0)
                results[g, c] = rec
            except (NumericalError, DomainError) as exc:
                results[g, c] = f"{type(exc).__name__}: {exc}"
            walls[g, c] = time.monotonic() - start
    return results, digests, walls


def lower_median(values):
    """Median with the lower-middle element for even counts."""
    vals = sorted(values)
    return vals[(len(vals) - 1) // 2]


@dataclass
class SummaryTable:
    config: ExperimentConfig
    # (g, c) -> (iterations, median rel error, median rel residual)
    medians: dict = field(default_factory=dict)
    final_median: dict = field(default_factory=dict)
    stall_rate: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)
    records: dict = field(default_factory=dict)

    def cell(self, g, variant, q):
        c = self.config.cells.index((Variant(variant), float(q)))
        return g, c


def summarize(cfg, trial_results):
    table = SummaryTable(cfg)
    for g, c in product(range(len(cfg.grid)), range(len(cfg.cells))):
        recs = [(t, res[g, c]) for t, (res, _, _) in enumerate(trial_results)]
        ok = [(t, r) for t, r in recs if not isinstance(r, str)]
        table.records[g, c] = ok
        table.failures[g, c] = len(recs) - len(ok)
        table.wall_time[g, c] = sum(w[g, c] for _, _, w in trial_results)
        if not ok:
            table.medians[g, c] = ([], [], [])
            table.final_median[g, c] = None
            table.stall_rate[g, c] = None
            continue
        iters = ok[0][1].iterations
        med_err = [lower_median(r.rel_error[k] for _, r in ok) for k in range(len(iters))]
        med_res = [lower_median(r.rel_residual[k] for _, r in ok) for k in range(len(iters))]
        table.medians[g, c] = (list(iters), med_err, med_res)
        table.final_median[g, c] = med_err[-1]
        table.stall_rate[g, c] = sum(r.stall_iterations for _, r in ok) / (len(ok) * cfg.iterations)
    return table


def run_experiment(cfg, write=True):
    """Run all trials, write CSV traces and summaries, return a :class:`SummaryTable`."""
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            trial_results = list(pool.map(run_trial, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        trial_results = [run_trial(cfg, t) for t in range(cfg.trials)]
    table = summarize(cfg, trial_results)
    if write:
        write_outputs(cfg, table, trial_results)
    return table


def write_outputs(cfg, table, trial_results):
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    for g, (bt, br) in enumerate(cfg.grid):
        gdir = os.path.join(out, grid_name(g, bt, br))
        os.makedirs(gdir, exist_ok=True)
        digests = [d[g] for _, d, _ in trial_results]
        comments = [f"plan trial={t} sha256={d}" for t, d in enumerate(digests)]
        for c, (variant, q) in enumerate(cfg.cells):
            fails = [
                f"failed trial={t} {res[g, c]}"
                for t, (res, _, _) in enumerate(trial_results)
                if isinstance(res[g, c], str)
            ]
            write_records_csv(
                os.path.join(gdir, cell_name(variant, q) + ".csv"),
                table.records[g, c],
                comments + fails,
            )

    with open(os.path.join(out, "medians.csv"), "w", newline="\n") as f:
        f.write("grid,beta_tilde,beta_row_tilde,variant,q,iter,median_rel_error,median_rel_residual\n")
        for (g, c), (iters, me, mr) in sorted(table.medians.items()):
            bt, br = cfg.grid[g]
            variant, q = cfg.cells[c]
            for k, e, r in zip(iters, me, mr):
                f.write(f"{g},{bt!r},{br!r},{variant.value},{q!r},{k},{e!r},{r!r}\n")

    with open(os.path.join(out, "summary.csv"), "w", newline="\n") as f:
        f.write("grid,beta_tilde,beta_row_tilde,variant,q,trials_ok,trials_failed,final_median_rel_error,stall_rate\n")
        for (g, c) in sorted(table.final_median):
            bt, br = cfg.grid[g]
            variant, q = cfg.cells[c]
            fm, sr = table.final_median[g, c], table.stall_rate[g, c]
            f.write(
                f"{g},{bt!r},{br!r},{variant.value},{q!r},{len(table.records[g, c])},"
                f"{table.failures[g, c]},{'' if fm is None else repr(fm)},{'' if sr is None else repr(sr)}\n"
            )

    # wall time is not reproducible, so it stays out of the CSV files
    with open(os.path.join(out, "timing.json"), "w") as f:
        timing = {
            f"{grid_name(g, *cfg.grid[g])}/{cell_name(*cfg.cells[c])}": w
            for (g, c), w in sorted(table.wall_time.items())
        }
        json.dump(timing, f, indent=2, sort_keys=True)


def compute_rates(cfg, trial=0):
    """Rate reports on the realized system and plans of one trial.

    One flat report per (grid point, distinct q among the cells).
    """
    seed_t = trial_seed(cfg.seed, trial)
    A, _, _ = make_system(cfg, seed_t)
    qs = sorted({q for _, q in cfg.cells})
    reports = []
    for g, (bt, br) in enumerate(cfg.grid):
        plan = make_plan(cfg, seed_t, g)
        for q in qs:
            rep = rate_report(A, plan.uncorrupted_rows, plan.beta, plan.beta_row, q, cfg.p).to_dict()
            reports.append({"trial": trial, "grid": g, "beta_tilde": bt, "beta_row_tilde": br, **rep})
    return reports


# ---------------------------------------------------------------------------
# Deblurring command
# ---------------------------------------------------------------------------

def _variants(text):
    return [Variant(v.strip().upper()) for v in text.split(",") if v.strip()]


DEBLUR_SCHEMA = {
    "input": (str, ""),
    "height": (int, 32),
    "width": (int, 32),
    "frames": (int, 4),
    "kernel": (str, "gaussian"),
    "kernel_size": (int, 5),
    "kernel_sigma": (float, 1.0),
    "corruptions": (int, 6),
    "corrupted_rows": (int, 3),
    "law": (MagnitudeLaw.parse, MagnitudeLaw("abs_normal", 3.0, 2.0)),
    "variants": (_variants, [Variant.QTRK, Variant.MQTRK]),
    "q": (float, 0.99),
    "iterations": (int, 2000),
    "record_every": (int, 1),
    "seed": (int, 0),
    "output": (str, "deblur_out"),
}


def load_video(cfg):
    src = cfg["input"]
    if not src:
        return db.synthetic_frames(cfg["height"], cfg["width"], cfg["frames"])
    if src.endswith(".t3b"):
        return np.clip(read_t3b(src), 0.0, 1.0)
    return db.load_frames(src)


def deblur_command(cfg):
    """Run the deblurring pipeline for every configured variant and write artifacts."""
    video = load_video(cfg)
    l, p, n = video.shape
    if cfg["kernel"] == "gaussian":
        blur = db.BlurSpec.gaussian(cfg["kernel_size"], cfg["kernel_sigma"])
    elif cfg["kernel"] == "delta":
        blur = db.BlurSpec.delta()
    else:
        raise ConfigError(f"unknown kernel {cfg['kernel']!r}")
    plan = plan_from_counts(
        (p, n, l), cfg["corrupted_rows"], cfg["corruptions"], cfg["law"], substream(cfg["seed"], 10)
    )
    out = cfg["output"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "plan.json"), "w") as f:
        f.write(plan.to_json() + "\n")
    metrics = {}
    result = None
    for variant in cfg["variants"]:
        sc = SolverConfig(variant, cfg["q"], cfg["iterations"], substream(cfg["seed"], 2), cfg["record_every"])
        result = db.run_deblur(video, blur, plan, sc)
        db.save_frames(os.path.join(out, variant.value.lower()), result.recovered)
        write_records_csv(
            os.path.join(out, f"{variant.value.lower()}.csv"),
            [(0, result.record)],
            [f"plan sha256={plan.digest()}"],
        )
        metrics[variant.value] = {k: float(v) for k, v in result.metrics.items()}
    if result is not None:
        db.save_frames(os.path.join(out, "baseline"), result.baseline)
        dy, dx = blur.anchor_shift
        shown = np.roll(result.corrupted, (-dy, -dx), axis=(0, 1))
        db.save_frames(os.path.join(out, "blurred_corrupted"), shown)
        db.save_frames(os.path.join(out, "original"), video)
    with open(os.path.join(out, "metrics.json"), "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    return metrics
