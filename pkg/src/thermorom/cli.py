"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .dataio import read_container
from .errors import DataError, NumericalError, ThermoRomError
from .grid import GridSpec
from .harness import evaluate_dir, load_config, run_assimilate, run_synth, run_train

log = logging.getLogger("thermorom")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_config_flags(p, assim: bool):
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--model", dest="model_path")
    p.add_argument("--basis", dest="basis_path")
    p.add_argument("--drivers")
    p.add_argument("--kind", choices=["sindyc_ar", "dmdc"])
    p.add_argument("--seed", type=int)
    if assim:
        p.add_argument("--start", help="ISO-8601 UTC or seconds since 2000-01-01")
        p.add_argument("--stop")
        p.add_argument("--assim", dest="assim_tracks", action="append", help="assimilated track CSV (repeatable)")
        p.add_argument("--withheld", dest="withheld_tracks", action="append", help="validation track CSV (repeatable)")
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--spin-up-h", type=float)
        p.add_argument("--q-scale", type=float)
        p.add_argument("--gate", type=float)
        p.add_argument("--t2", type=float)
        p.add_argument("--eval-start")
        p.add_argument("--eval-stop")
        p.add_argument("--no-plots", action="store_true")
    else:
        p.add_argument("--snapshots", action="append", help="snapshot container (repeatable)")
        p.add_argument("--train-drivers")
        p.add_argument("--rank", dest="r", type=int)
        p.add_argument("--n-ar", type=int)
        p.add_argument("--alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thermorom", description="Reduced-order thermospheric density assimilation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic twin experiment directory")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, nargs=3, metavar=("N_LT", "N_LAT", "N_ALT"), default=[12, 10, 8])
    p.add_argument("--r-true", type=int, default=4)
    p.add_argument("--train-hours", type=int, default=480)
    p.add_argument("--eval-hours", type=int, default=96)
    p.add_argument("--mismatch", type=float, default=0.1)
    p.add_argument("--process-noise", type=float, default=0.05)
    p.add_argument("--rel-err", type=float, default=0.05)
    p.add_argument("--negative-fraction", type=float, default=0.0)

    _add_config_flags(sub.add_parser("train", help="fit basis and latent model"), assim=False)
    _add_config_flags(sub.add_parser("assimilate", help="run the filter and write reports"), assim=True)

    p = sub.add_parser("evaluate", help="recompute the MAPE table from a report directory")
    p.add_argument("report_dir")
    p.add_argument("--eval-start")
    p.add_argument("--eval-stop")
    p.add_argument("--spin-up-h", type=float)

    p = sub.add_parser("inspect", help="dump the header of an RDX1 container")
    p.add_argument("path")
    p.add_argument("--values", action="store_true", help="also print small arrays")
    return parser


def _overrides(args) -> dict:
    skip = {"verb", "verbose", "config", "spin_up_h", "no_plots"}
    out = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    if getattr(args, "spin_up_h", None) is not None:
        out["spin_up_s"] = args.spin_up_h * 3600.0
    if getattr(args, "no_plots", False):
        out["plots"] = False
    return out


def _cmd_inspect(args) -> int:
    arrays, attrs = read_container(args.path)
    print(f"# {args.path}")
    print("name,dtype,shape")
    for name, arr in arrays.items():
        print(f"{name},{arr.dtype.str},{'x'.join(map(str, arr.shape))}")
    print("# attrs")
    print(json.dumps(attrs, indent=2, sort_keys=True))
    if args.values:
        with np.printoptions(threshold=50, precision=6):
            for name, arr in arrays.items():
                print(f"{name} = {arr}")
    return 0


def _cmd_evaluate(args) -> int:
    from .dataio import parse_epoch

    lo = int(parse_epoch(args.eval_start)) if args.eval_start else None
    hi = int(parse_epoch(args.eval_stop)) if args.eval_stop else None
    spin = args.spin_up_h * 3600.0 if args.spin_up_h is not None else None
    summary = evaluate_dir(args.report_dir, lo, hi, spin)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["satellite", "role", "estimate", "mape_percent", "n_points"])
    for row in summary:
        out.writerow([row["satellite"], row["role"], row["estimate"], f"{row['mape']:.4f}", row["n"]])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "synth":
            path = run_synth(args.out, seed=args.seed, grid=GridSpec(*args.grid), r_true=args.r_true,
                             train_hours=args.train_hours, eval_hours=args.eval_hours, mismatch=args.mismatch,
                             process_noise=args.process_noise, rel_err=args.rel_err,
                             negative_fraction=args.negative_fraction)
            print(path)
        elif args.verb == "train":
            config = load_config(args.config, _overrides(args))
            basis, model = run_train(config)
            print(f"basis r={basis.r} d={basis.d} -> {config.basis_path}")
            print(f"model {model.kind} n_ar={model.n_ar} cadence={model.cadence_s:g}s -> {config.model_path}")
        elif args.verb == "assimilate":
            config = load_config(args.config, _overrides(args))
            report = run_assimilate(config)
            out = csv.writer(sys.stdout, lineterminator="\n")
            out.writerow(["satellite", "role", "estimate", "mape_percent", "n_points"])
            for row in report.summary:
                out.writerow([row["satellite"], row["role"], row["estimate"], f"{row['mape']:.4f}", row["n"]])
        elif args.verb == "evaluate":
            return _cmd_evaluate(args)
        elif args.verb == "inspect":
            return _cmd_inspect(args)
    except ThermoRomError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
