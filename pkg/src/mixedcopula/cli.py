"""Command-line interface: ``fit``, ``impute``, ``simulate`` and ``evaluate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import csv
import dataclasses
import math
import sys

import numba
import numpy as np

from .estimator import FitConfig, fit
from .imputer import RULES, impute_dataset
from .io import (DataError, FittedModel, config_digest, format_float,
                 load_csv, load_model, read_matrix, read_schema, save_model,
                 write_csv, write_matrix, write_probabilities, write_schema)
from .marginals import DegenerateMarginalError
from .metrics import MetricReport, evaluate
from .mvn_rqmc import FactorizationError, RqmcConfig
from .schema import Schema, Variable
from .simulate import read_sim_config, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser():
    p = _Parser(prog="mixedcopula",
                description="Gaussian copula imputation for mixed data.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="fit marginals and the copula")
    f.add_argument("--data", required=True)
    f.add_argument("--schema", required=True)
    f.add_argument("--out", required=True, help="model file to write")
    f.add_argument("--method", choices=["svrg", "adam"], default="svrg")
    f.add_argument("--lr", type=_positive_float, default=None)
    f.add_argument("--batch", type=_positive_int, default=FitConfig.batch_size)
    f.add_argument("--epochs", type=int, default=FitConfig.epochs)
    f.add_argument("--seed", type=int, default=1)
    f.add_argument("--rel-tol", type=_positive_float,
                   default=RqmcConfig.rel_tol)
    f.add_argument("--max-samples", type=_positive_int,
                   default=RqmcConfig.max_samples)
    f.add_argument("--threads", type=_positive_int, default=None)
    f.add_argument("--quiet", action="store_true",
                   help="do not print per-epoch progress")

    i = sub.add_parser("impute", help="fill missing cells")
    i.add_argument("--data", required=True)
    i.add_argument("--model", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--rule", choices=RULES, default="argmax")
    i.add_argument("--probs", default=None,
                   help="optional sidecar CSV of category probabilities")
    i.add_argument("--seed", type=int, default=1)
    i.add_argument("--threads", type=_positive_int, default=None)

    s = sub.add_parser("simulate", help="draw a synthetic table")
    s.add_argument("--config", required=True, help="key=value file")
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("evaluate", help="imputation metrics as CSV")
    e.add_argument("--imputed", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--mask", required=True,
                   help="CSV with the data header and 1 where a cell was "
                        "masked")
    e.add_argument("--schema", required=True)
    e.add_argument("--sigma-hat", default=None,
                   help="CSV matrix or fitted model file")
    e.add_argument("--sigma-true", default=None, help="CSV matrix")
    e.add_argument("--no-standardize", action="store_true",
                   help="report RMSE on the raw scale")
    return p


def _set_threads(n):
    if n is not None:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def cmd_fit(args):
    _set_threads(args.threads)
    schema = read_schema(args.schema)
    data = load_csv(args.data, schema)
    rqmc = RqmcConfig(rel_tol=args.rel_tol, max_samples=args.max_samples,
                      min_samples=min(RqmcConfig.min_samples, args.max_samples),
                      seed=args.seed)
    config = FitConfig(method=args.method, learning_rate=args.lr,
                       batch_size=args.batch, epochs=args.epochs, rqmc=rqmc,
                       seed=args.seed, verbose=not args.quiet)
    params, marginals, report = fit(data, schema, config)
    settings = dataclasses.asdict(config)
    del settings["verbose"]  # output only; keeps the file independent of it
    meta = {
        "seed": args.seed,
        "config": settings,
        "config_digest": config_digest(settings),
        "termination": report.reason,
        "epochs": report.epochs,
        "nll": report.nll,
    }
    save_model(FittedModel(schema, marginals, params, meta), args.out)
    if report.reason == "diverged":
        print("fit diverged; saved the last finite parameters",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_impute(args):
    _set_threads(args.threads)
    model = load_model(args.model)
    data = load_csv(args.data, model.schema)
    config = RqmcConfig.for_imputation(seed=args.seed)
    out, results = impute_dataset(data, model.params, model.marginals, config,
                                  rule=args.rule)
    write_csv(args.out, out, model.schema)
    if args.probs:
        write_probabilities(args.probs, results, model.schema)
    flagged = sum(r.fully_missing for r in results)
    if flagged:
        print(f"{flagged} fully missing rows imputed from the marginals",
              file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    config = read_sim_config(args.config, seed=args.seed)
    sim = simulate(config)
    prefix = args.out_prefix
    write_schema(sim.schema, f"{prefix}_schema.json")
    write_csv(f"{prefix}_complete.csv", sim.complete, sim.schema)
    write_csv(f"{prefix}_masked.csv", sim.masked, sim.schema)
    write_csv(f"{prefix}_mask.csv", sim.mask.astype(float),
              _mask_schema(sim.schema))
    write_matrix(f"{prefix}_sigma.csv", sim.sigma)
    write_matrix(f"{prefix}_mean.csv", sim.mean[None, :])
    return EXIT_OK


def _mask_schema(schema):
    return Schema(tuple(Variable(v.name, "binary") for v in schema))


def _read_sigma(path):
    if path.endswith(".json"):
        return load_model(path).params.sigma
    return read_matrix(path)


def cmd_evaluate(args):
    schema = read_schema(args.schema)
    imputed = load_csv(args.imputed, schema)
    truth = load_csv(args.truth, schema)
    mask = load_csv(args.mask, _mask_schema(schema))
    if not (imputed.shape == truth.shape == mask.shape):
        raise DataError("imputed, truth and mask tables differ in shape")
    if np.isnan(mask).any():
        raise DataError(f"{args.mask}: mask cells must be 0 or 1")
    if (args.sigma_hat is None) != (args.sigma_true is None):
        raise UsageError("--sigma-hat and --sigma-true go together")
    s_hat = s_true = None
    if args.sigma_hat:
        s_hat, s_true = _read_sigma(args.sigma_hat), _read_sigma(args.sigma_true)
        if s_hat.shape != s_true.shape:
            raise DataError("the two correlation matrices differ in shape")
    report = evaluate(imputed, truth, mask.astype(bool), schema, s_hat, s_true,
                      standardize=not args.no_standardize)
    _write_report(report, sys.stdout)
    return EXIT_OK


def _write_report(report, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MetricReport.COLUMNS)
    for rec in report.records():
        w.writerow([rec[c] if isinstance(rec[c], (str, int))
                    else ("NA" if math.isnan(rec[c]) else format_float(rec[c]))
                    for c in MetricReport.COLUMNS])


COMMANDS = {"fit": cmd_fit, "impute": cmd_impute, "simulate": cmd_simulate,
            "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FactorizationError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DegenerateMarginalError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
