"""Command-line interface: ``drcit test``, ``drcit bench`` and ``drcit train``.

Exit codes: 0 success, 1 runtime failure (e.g. training divergence),
2 input error (unreadable or malformed CSV), 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .dgp import DGP_KINDS, DgpSpec, TripleSample
from .errors import InputError, TrainingError, UsageError
from .generator import TrainConfig, load_generator, save_generator, train_gmmn
from .harness import MODES, SIDES, ExperimentPlan, run_experiment, write_reports
from .kernels import FAMILIES
from .procedure import TestConfig, ci_test

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INPUT = 2
EXIT_USAGE = 64
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------


def read_matrix(path) -> tuple[list, np.ndarray]:
    """Read a numeric CSV with a mandatory header row; returns (header, values).

    Rejects missing files, ragged rows, empty cells, non-numeric or non-finite
    values, naming the offending line and column.
    """
    if path is None:
        raise InputError("missing input file")
    if not os.path.isfile(path):
        raise InputError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if all(_is_number(h) for h in header):
        raise InputError(f"{path}: line 1 looks numeric; a header row is required")
    width = len(header)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue  # tolerate blank lines (e.g. trailing newline)
        if len(row) != width:
            raise InputError(f"{path}: line {lineno} has {len(row)} fields, header has {width}")
        parsed = []
        for col, cell in zip(header, row):
            cell = cell.strip()
            if cell == "":
                raise InputError(f"{path}: line {lineno}, column {col!r}: empty cell")
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: line {lineno}, column {col!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: line {lineno}, column {col!r}: non-finite value {cell!r}")
            parsed.append(v)
        values.append(parsed)
    if not values:
        raise InputError(f"{path}: no data rows")
    return header, np.array(values, dtype=np.float64)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_matrix(path, header, values) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in values:
            w.writerow([format(v, ".17g") for v in row])


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _levels(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}") from None


def _hidden(text):
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid hidden sizes {text!r}") from None


def _add_test_flags(p):
    for side in ("x", "y", "z"):
        p.add_argument(f"--kernel-{side}", choices=FAMILIES, default="laplacian")
    p.add_argument("--folds", type=int, default=2, help="number of cross-fitting folds J")
    p.add_argument("--m", type=int, default=100, help="synthetic draws per observation")
    p.add_argument("--bootstrap", type=int, default=1000, help="wild-bootstrap replicates B")
    p.add_argument("--gamma", type=float, default=0.05, help="significance level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def _add_train_flags(p):
    d = TrainConfig()
    g = p.add_argument_group("generator training")
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--lr", type=float, default=d.learning_rate)
    g.add_argument("--final-lr-fraction", type=float, default=d.final_lr_fraction)
    g.add_argument("--latent-dim", type=int, default=d.latent_dim)
    g.add_argument("--hidden", type=_hidden, default=d.hidden, help="comma-separated hidden widths")
    g.add_argument("--m-train", type=int, default=d.m_train)
    g.add_argument("--activation", choices=("tanh", "relu"), default=d.activation)
    g.add_argument("--holdout", type=float, default=d.holdout_fraction)
    g.add_argument("--x-bandwidth-scale", type=float, default=d.x_bandwidth_scale,
                   help="training X kernel bandwidth as a multiple of the median heuristic")
    g.add_argument("--full-batch", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drcit", description="Doubly robust kernel conditional independence test.")
    parser.add_argument("--version", action="version", version=f"drcit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="test X independent of Y given Z on CSV data")
    t.add_argument("--x", required=True)
    t.add_argument("--y", required=True)
    t.add_argument("--z", required=True)
    t.add_argument("--generator", choices=("gmmn", "load"), default="gmmn")
    t.add_argument("--gen-x", help="saved X generator (with --generator load)")
    t.add_argument("--gen-y", help="saved Y generator (with --generator load)")
    t.add_argument("--output", help="result JSON path (default: stdout)")
    _add_test_flags(t)
    _add_train_flags(t)

    b = sub.add_parser("bench", help="Monte Carlo size/power experiment on a simulated design")
    b.add_argument("--dgp", required=True, help=f"one of {', '.join(DGP_KINDS)}")
    b.add_argument("--n", type=int, default=200)
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--levels", type=_levels, default=(0.05, 0.10))
    b.add_argument("--p", type=float, default=0.0, help="bernoulli_mixture coupling probability")
    b.add_argument("--dz", type=int, default=1, help="post_nonlinear dimension of Z")
    b.add_argument("--b", type=float, default=0.0, help="post_nonlinear dependence strength")
    b.add_argument("--alternative", action="store_true", help="weak_ci alternative instead of the null")
    b.add_argument("--mode", choices=MODES, default="oracle")
    b.add_argument("--side", choices=SIDES, default="x", help="corrupted side (mode corrupted)")
    b.add_argument("--shift", type=float, default=0.5, help="corruption shift (mode corrupted)")
    b.add_argument("--t0", action="store_true", help="also record the plug-in statistic")
    b.add_argument("--output", required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")
    _add_test_flags(b)
    _add_train_flags(b)

    r = sub.add_parser("train", help="fit one conditional generator and save it")
    target = r.add_mutually_exclusive_group(required=True)
    target.add_argument("--x")
    target.add_argument("--y")
    r.add_argument("--z", required=True)
    r.add_argument("--kernel-z", choices=FAMILIES, default="laplacian")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--output", required=True, help="generator JSON path")
    _add_train_flags(r)
    return parser


def _train_config(args, seed=0) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        final_lr_fraction=args.final_lr_fraction,
        latent_dim=args.latent_dim,
        hidden=args.hidden,
        m_train=args.m_train,
        activation=args.activation,
        holdout_fraction=args.holdout,
        full_batch=args.full_batch,
        x_bandwidth_scale=args.x_bandwidth_scale,
        seed=seed,
    )


def _test_config(args) -> TestConfig:
    return TestConfig(
        n_folds=args.folds,
        M=args.m,
        B=args.bootstrap,
        gamma=args.gamma,
        kernel_x=args.kernel_x,
        kernel_y=args.kernel_y,
        kernel_z=args.kernel_z,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def result_document(outcome, seed, train_cfg=None, generator=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "statistic": outcome.t,
        "p_value": outcome.p_value,
        "reject": outcome.reject,
        "per_fold": list(outcome.per_fold),
        "bandwidths": outcome.bandwidths,
        "config": {
            "test": outcome.config,
            "generator": generator,
            "train": train_cfg.to_dict() if train_cfg is not None else None,
        },
        "seed": seed,
    }


def cmd_test(args) -> int:
    config = _test_config(args)
    _, x = read_matrix(args.x)
    _, y = read_matrix(args.y)
    _, z = read_matrix(args.z)
    if not (len(x) == len(y) == len(z)):
        raise InputError(f"row counts differ: x {len(x)}, y {len(y)}, z {len(z)}")
    sample = TripleSample(x, y, z)
    if args.generator == "load":
        if not (args.gen_x and args.gen_y):
            raise UsageError("--generator load needs --gen-x and --gen-y")
        gens = (_load(args.gen_x), _load(args.gen_y))
        train_cfg = None
        generator = {"mode": "load", "x": gens[0].to_dict(), "y": gens[1].to_dict()}
    else:
        gens = None
        train_cfg = _train_config(args)
        generator = {"mode": "gmmn"}
    outcome = ci_test(sample, config, seed=args.seed, generators=gens, train_cfg=train_cfg,
                      threads=max(1, args.threads))
    text = json.dumps(result_document(outcome, args.seed, train_cfg, generator), indent=2) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load(path):
    if not os.path.isfile(path):
        raise InputError(f"{path}: no such file")
    try:
        return load_generator(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a generator file ({exc})") from None


def cmd_bench(args) -> int:
    if args.dgp not in DGP_KINDS:
        raise UsageError(f"unknown dgp {args.dgp!r}; expected one of {', '.join(DGP_KINDS)}")
    plan = ExperimentPlan(
        dgp=DgpSpec(args.dgp, p=args.p, d_z=args.dz, b=args.b, alternative=args.alternative),
        n=args.n,
        reps=args.reps,
        levels=args.levels,
        test=_test_config(args),
        mode=args.mode,
        corrupt_side=args.side,
        corrupt_shift=args.shift,
        train=_train_config(args) if args.mode == "gmmn" else None,
        master_seed=args.seed,
        record_t0=args.t0,
        name=args.dgp,
    )
    report = run_experiment(plan, n_jobs=max(1, args.threads))
    write_reports([report], csv_path=args.output + ".csv", json_path=args.output + ".json")
    for a in plan.levels:
        print(f"level {a:g}: rejection rate {report.rates[a]:.4f} (se {report.se[a]:.4f}, "
              f"{len(report.ok)} reps)")
    print(f"wall time {report.wall_seconds:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    target = args.x if args.x is not None else args.y
    _, w = read_matrix(target)
    _, z = read_matrix(args.z)
    if len(w) != len(z):
        raise InputError(f"row counts differ: target {len(w)}, z {len(z)}")
    cfg = _train_config(args, seed=args.seed)
    gen = train_gmmn(w, z, cfg, kz_family=args.kernel_z)
    save_generator(gen, args.output)
    print(f"initial held-out objective {gen.trace[0][1]:.6g}")
    print(f"final held-out objective {gen.trace[-1][1]:.6g}")
    return EXIT_OK


COMMANDS = {"test": cmd_test, "bench": cmd_bench, "train": cmd_train}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
