"""Command-line entry point ``l96rbm``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""
import argparse
import logging
import os
import sys

import numpy as np
import yaml

from . import __version__
from ._jit import set_threads
from .errors import AlignmentError, ConfigError, DivergenceError
from .harness import (
    batch_sweep,
    compare_dirs,
    dt_sweep,
    load_config,
    parse_override,
    run_experiment,
    write_curves,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("l96rbm")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from err


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads for the compiled kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("-c", "--config", required=True, help="YAML experiment file")
    configured.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                            help="override one config field (repeatable)")

    ap = argparse.ArgumentParser(prog="l96rbm", description="Lorenz '96 closure and random-batch experiments")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common, configured], help="run one experiment")

    cmp_ = sub.add_parser("compare", parents=[common], help="compare two run directories (model, truth)")
    cmp_.add_argument("model_dir")
    cmp_.add_argument("truth_dir")
    cmp_.add_argument("--t0", type=float, default=-np.inf, help="start of the comparison window")

    sdt = sub.add_parser("sweep-dt", parents=[common, configured], help="time-step convergence study")
    sdt.add_argument("--dts", type=_floats, required=True, help="descending list, e.g. 4e-3,2e-3,1e-3")
    sdt.add_argument("--record-dt", type=float, help="record interval in time units")
    sdt.add_argument("--metric", choices=("variance", "total_variance", "mean"), default="variance")

    sb = sub.add_parser("sweep-batch", parents=[common, configured], help="batch-size study")
    sb.add_argument("--ps", type=_ints, required=True, help="batch sizes, e.g. 2,5,10")
    sb.add_argument("--metric", choices=("variance", "total_variance", "mean"), default="variance")
    return ap


def _config(args):
    overrides = dict(parse_override(o) for o in args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, overrides)


def _scalar_report(report):
    out = {k: v for k, v in report.items() if k != "curves"}
    return yaml.safe_dump(out, sort_keys=False)


def _emit_table(table, out):
    print(",".join(table.header()))
    for row in table.rows():
        print(",".join(str(x) for x in row))
    if table.slope is not None:
        print(f"# slope={table.slope:.4f} fit_range={table.fit_range}")
    if out:
        os.makedirs(out, exist_ok=True)
        table.write(os.path.join(out, f"sweep_{table.name}.csv"))


def _run(args):
    if args.command == "run":
        cfg = _config(args)
        _, manifest = run_experiment(cfg)
        print(yaml.safe_dump({"status": manifest.status, "out": cfg.out, "config_hash": manifest.config_hash,
                              "timings": manifest.timings}, sort_keys=False), end="")
    elif args.command == "compare":
        report = compare_dirs(args.model_dir, args.truth_dir, args.t0)
        print(_scalar_report(report), end="")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            write_curves(report, os.path.join(args.out, "errors.csv"))
    elif args.command == "sweep-dt":
        cfg = _config(args)
        _emit_table(dt_sweep(cfg, args.dts, record_dt=args.record_dt, metric=args.metric), args.out)
    elif args.command == "sweep-batch":
        cfg = _config(args)
        _emit_table(batch_sweep(cfg, args.ps, metric=args.metric), args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    set_threads(args.threads)
    try:
        _run(args)
    except (ConfigError, AlignmentError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
