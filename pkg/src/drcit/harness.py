"""Monte Carlo experiments: rejection rates and size-adjusted power.

Replication ``r`` of a plan with master seed ``s`` uses
``SeedSequence([s, r]).spawn(2) -> [data, test]``; the test stream is handed
to :func:`drcit.procedure.ci_test`.  Replications are therefore independent
of each other and of the order (or process) in which they run.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .dgp import DgpSpec, corrupt_oracle, generate
from .errors import TrainingError, UsageError
from .generator import TrainConfig
from .procedure import TestConfig, ci_test

MODES = ("oracle", "gmmn", "corrupted")
SIDES = ("x", "y", "both")
MAX_FAILED_FRACTION = 0.02


@dataclass
class ExperimentPlan:
    dgp: DgpSpec
    n: int
    reps: int
    levels: tuple = (0.05, 0.10)
    test: TestConfig = field(default_factory=TestConfig)
    mode: str = "oracle"
    corrupt_side: str = "x"
    corrupt_shift: float = 0.5
    train: TrainConfig | None = None
    master_seed: int = 0
    record_t0: bool = False
    name: str = ""

    def __post_init__(self):
        if self.reps < 1:
            raise UsageError("reps must be >= 1")
        if self.n < 2 * self.test.n_folds:
            raise UsageError(f"fold of size < 2: n={self.n} with {self.test.n_folds} folds")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        if self.corrupt_side not in SIDES:
            raise UsageError(f"corrupt_side must be one of {SIDES}")
        self.levels = tuple(float(a) for a in self.levels)
        if not self.levels or any(not 0 < a < 1 for a in self.levels):
            raise UsageError("levels must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dgp": self.dgp.to_dict(),
            "n": self.n,
            "reps": self.reps,
            "levels": list(self.levels),
            "test": self.test.to_dict(),
            "mode": self.mode,
            "corrupt_side": self.corrupt_side if self.mode == "corrupted" else None,
            "corrupt_shift": self.corrupt_shift if self.mode == "corrupted" else None,
            "train": self.train.to_dict() if self.train is not None else None,
            "master_seed": self.master_seed,
            "record_t0": self.record_t0,
        }


@dataclass
class RepResult:
    rep: int
    t: float = float("nan")
    p_value: float = float("nan")
    t0: float | None = None
    error: str | None = None


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    reps: list  # RepResult in rep order
    rates: dict  # level -> rejection rate
    se: dict  # level -> Monte Carlo standard error
    size_adjusted_power: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    @property
    def ok(self) -> list:
        return [r for r in self.reps if r.error is None]

    @property
    def stats(self) -> np.ndarray:
        return np.array([r.t for r in self.ok])

    @property
    def p_values(self) -> np.ndarray:
        return np.array([r.p_value for r in self.ok])

    @property
    def n_failed(self) -> int:
        return len(self.reps) - len(self.ok)

    def t0_summary(self):
        """(mean, standard error) of the recorded plug-in statistic, or None."""
        vals = np.array([r.t0 for r in self.ok if r.t0 is not None])
        if vals.size < 2:
            return None
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "rates": {str(k): v for k, v in self.rates.items()},
            "se": {str(k): v for k, v in self.se.items()},
            "size_adjusted_power": {str(k): v for k, v in self.size_adjusted_power.items()},
            "failed_reps": self.n_failed,
            "t0_summary": self.t0_summary(),
            "reps": [dataclasses.asdict(r) for r in self.reps],
        }


def rejection_se(rate: float, reps: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / reps)


def _generators_for(plan: ExperimentPlan, draw):
    if plan.mode == "gmmn":
        return None
    gx, gy = draw.oracle_x, draw.oracle_y
    if plan.mode == "corrupted":
        if plan.corrupt_side in ("x", "both"):
            gx = corrupt_oracle(gx, plan.corrupt_shift)
        if plan.corrupt_side in ("y", "both"):
            gy = corrupt_oracle(gy, plan.corrupt_shift)
    return (gx, gy)


def run_rep(plan: ExperimentPlan, rep: int) -> RepResult:
    data_seq, test_seq = np.random.SeedSequence([plan.master_seed, rep]).spawn(2)
    draw = generate(plan.dgp, plan.n, np.random.default_rng(data_seq))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            out = ci_test(draw.sample, plan.test, seed=test_seq, generators=_generators_for(plan, draw),
                          train_cfg=plan.train, with_t0=plan.record_t0)
        except TrainingError as exc:
            return RepResult(rep, error=str(exc))
    return RepResult(rep, out.t, out.p_value, out.t0)


def _run_chunk(plan, reps):
    return [run_rep(plan, r) for r in reps]


def run_experiment(plan: ExperimentPlan, n_jobs: int = 1, progress=None) -> ExperimentReport:
    """Run every replication of ``plan`` and aggregate rejection rates per level."""
    start = time.perf_counter()
    if n_jobs > 1:
        chunks = [list(range(i, plan.reps, n_jobs)) for i in range(n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = [r for chunk in pool.map(_run_chunk, [plan] * n_jobs, chunks) for r in chunk]
        results.sort(key=lambda r: r.rep)
    else:
        results = []
        for r in range(plan.reps):
            results.append(run_rep(plan, r))
            if progress is not None:
                progress(r + 1, plan.reps)
    failed = sum(r.error is not None for r in results)
    if failed and failed / plan.reps >= MAX_FAILED_FRACTION:
        raise TrainingError(f"{failed} of {plan.reps} replications failed to train")
    p = np.array([r.p_value for r in results if r.error is None])
    rates = {a: float(np.mean(p < a)) for a in plan.levels}
    se = {a: rejection_se(rates[a], len(p)) for a in plan.levels}
    return ExperimentReport(plan, results, rates, se, wall_seconds=time.perf_counter() - start)


def size_adjusted_power(null_stats, alt_stats, level: float) -> float:
    """Share of alternative statistics strictly above the null critical value.

    The critical value is the ceil((1 - level) * R)-th order statistic of the R
    null statistics.
    """
    null_stats = np.sort(np.asarray(null_stats, dtype=np.float64))
    alt_stats = np.asarray(alt_stats, dtype=np.float64)
    if null_stats.size == 0 or alt_stats.size == 0:
        raise UsageError("need nonempty null and alternative statistics")
    if not 0 < level < 1:
        raise UsageError("level must lie in (0, 1)")
    R = null_stats.size
    rank = max(1, math.ceil(round((1.0 - level) * R, 9)))
    crit = null_stats[rank - 1]
    return float(np.mean(alt_stats > crit))


def attach_size_adjusted(null_report: ExperimentReport, alt_report: ExperimentReport) -> dict:
    """Fill ``alt_report.size_adjusted_power`` from a matching null experiment."""
    alt_report.size_adjusted_power = {
        a: size_adjusted_power(null_report.stats, alt_report.stats, a) for a in alt_report.plan.levels
    }
    return alt_report.size_adjusted_power


def sweep(plans, master_seed: int | None = None, n_jobs: int = 1):
    """Run plans independently; returns (reports, long-format table).

    With ``master_seed`` set, plan i runs with seed ``master_seed + i``.
    """
    reports = []
    for i, plan in enumerate(plans):
        if master_seed is not None:
            plan = dataclasses.replace(plan, master_seed=master_seed + i)
        reports.append(run_experiment(plan, n_jobs=n_jobs))
    return reports, results_table(reports)


TABLE_COLUMNS = ["plan_id", "name", "dgp", "p", "d_z", "b", "alternative", "n", "folds", "mode",
                 "level", "rate", "se", "size_adjusted_power", "reps", "failed_reps"]


def results_table(reports) -> pd.DataFrame:
    rows = []
    for i, rep in enumerate(reports):
        plan = rep.plan
        for a in plan.levels:
            rows.append({
                "plan_id": i,
                "name": plan.name,
                "dgp": plan.dgp.kind,
                "p": plan.dgp.p,
                "d_z": plan.dgp.d_z,
                "b": plan.dgp.b,
                "alternative": plan.dgp.alternative,
                "n": plan.n,
                "folds": plan.test.n_folds,
                "mode": plan.mode,
                "level": a,
                "rate": rep.rates[a],
                "se": rep.se[a],
                "size_adjusted_power": rep.size_adjusted_power.get(a, float("nan")),
                "reps": len(rep.ok),
                "failed_reps": rep.n_failed,
            })
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_reports(reports, csv_path=None, json_path=None) -> None:
    for path in (csv_path, json_path):
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    if csv_path is not None:
        results_table(reports).to_csv(csv_path, index=False)
    if json_path is not None:
        doc = {"schema": "drcit-experiments", "version": 1, "experiments": [r.to_dict() for r in reports]}
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
