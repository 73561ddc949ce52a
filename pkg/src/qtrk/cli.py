"""Command line entry point.

    qtrk experiment <config>
    qtrk rates <config>
    qtrk deblur <config>
    qtrk gen-tensor <shape> <seed> <out.t3b>

Exit codes: 0 success, 2 config error, 3 numerical error, 1 I/O error.
"""
import argparse
import json
import re
import sys

from .errors import ConfigError, DomainError, NumericalError, ShapeError
from .harness import DEBLUR_SCHEMA, ExperimentConfig, compute_rates, deblur_command, parse_kv, run_experiment
from .solvers import make_rng
from .tensor_core import write_t3b

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 1


def _read(path):
    with open(path) as f:
        return f.read()


def cmd_experiment(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.output:
        cfg.output = args.output
    table = run_experiment(cfg)
    for (g, c), fm in sorted(table.final_median.items()):
        variant, q = cfg.cells[c]
        bt, br = cfg.grid[g]
        print(f"beta~={bt} beta_row~={br} {variant.value} q={q}: final median rel error {fm} "
              f"(stall rate {table.stall_rate[g, c]}, failed {table.failures[g, c]})")
    print(f"wrote {cfg.output}")
    return 0


def cmd_rates(args):
    cfg = ExperimentConfig.from_file(args.config)
    reports = compute_rates(cfg, args.trial)
    text = json.dumps(reports, indent=2, sort_keys=True)
    print(text)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text + "\n")
    return 0


def cmd_deblur(args):
    cfg = parse_kv(_read(args.config), DEBLUR_SCHEMA)
    if args.output:
        cfg["output"] = args.output
    metrics = deblur_command(cfg)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def parse_shape(text):
    parts = [p for p in re.split(r"[x,\s]+", text.strip()) if p]
    if len(parts) != 3:
        raise ConfigError(f"shape must have three dimensions, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad shape {text!r}") from None
    if min(dims) < 1:
        raise ConfigError(f"dimensions must be positive, got {dims}")
    return dims


def cmd_gen_tensor(args):
    shape = parse_shape(args.shape)
    write_t3b(args.out, make_rng(args.seed).standard_normal(shape))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="qtrk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", help="multi-trial solver sweep")
    p.add_argument("config")
    p.add_argument("--output", help="override the output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("rates", help="theoretical rate constants as JSON")
    p.add_argument("config")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--output", help="also write the JSON here")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("deblur", help="video deblurring pipeline")
    p.add_argument("config")
    p.add_argument("--output", help="override the output directory")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("gen-tensor", help="write a Gaussian random tensor in T3B format")
    p.add_argument("shape", help="e.g. 25x5x10")
    p.add_argument("seed", type=int)
    p.add_argument("out")
    p.set_defaults(func=cmd_gen_tensor)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DomainError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
