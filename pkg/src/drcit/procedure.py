"""End-to-end test: folds, per-fold generators, statistic, bootstrap, decision.

Randomness is split from a single seed with ``numpy.random.SeedSequence``::

    SeedSequence(seed).spawn(4) -> [folds, synthetic noise, training, multipliers]
    training.spawn(J)[j].spawn(2) -> [X generator, Y generator] of fold j

Each training child is turned into an integer ``TrainConfig.seed`` via
``generate_state(1)``.  Every stream is consumed in a fixed order, so the
result does not depend on the number of threads.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bootstrap import TestOutcome, decide, p_value, wild_bootstrap
from .dgp import TripleSample
from .errors import UsageError
from .generator import CondGenerator, TrainConfig, train_gmmn
from .kernels import FAMILIES
from .statistic import FoldPlan, make_fold_plan, statistic_tj


@dataclass
class TestConfig:
    __test__ = False  # not a pytest class

    n_folds: int = 2
    M: int = 100
    B: int = 1000
    gamma: float = 0.05
    kernel_x: str = "laplacian"
    kernel_y: str = "laplacian"
    kernel_z: str = "laplacian"

    def __post_init__(self):
        if self.n_folds < 1 or self.M < 1 or self.B < 1:
            raise UsageError("folds, M and B must all be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise UsageError("gamma must lie in (0, 1)")
        for fam in (self.kernel_x, self.kernel_y, self.kernel_z):
            if fam not in FAMILIES:
                raise UsageError(f"unknown kernel family {fam!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _child_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def fit_generators(sample: TripleSample, plan: FoldPlan, train_cfg: TrainConfig,
                   seed_seq: np.random.SeedSequence, kernel_z: str = "laplacian",
                   threads: int = 1) -> list:
    """Train an (X, Y) generator pair for every fold on the other folds' rows."""
    jobs = []
    for j, fold_seq in enumerate(seed_seq.spawn(plan.J)):
        seq_x, seq_y = fold_seq.spawn(2)
        rest = plan.complement(j) if plan.J > 1 else plan.folds[0]
        jobs.append((sample.x[rest], sample.z[rest], dataclasses.replace(train_cfg, seed=_child_seed(seq_x))))
        jobs.append((sample.y[rest], sample.z[rest], dataclasses.replace(train_cfg, seed=_child_seed(seq_y))))

    def run(job):
        w, z, cfg = job
        return train_gmmn(w, z, cfg, kz_family=kernel_z)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            gens = list(pool.map(run, jobs))
    else:
        gens = [run(job) for job in jobs]
    return [(gens[2 * j], gens[2 * j + 1]) for j in range(plan.J)]


def ci_test(sample: TripleSample, config: TestConfig | None = None, seed=0, generators=None,
            train_cfg: TrainConfig | None = None, threads: int = 1, with_t0: bool = False) -> TestOutcome:
    """Run the full conditional-independence test on ``sample``.

    ``generators`` may be ``None`` (train moment-matching generators per fold
    with ``train_cfg``), a single ``(gen_x, gen_y)`` pair used for every fold
    (oracles, or networks fitted on independent data), or a list of one pair
    per fold.  With a single fold the generators are fitted on the same rows
    they are evaluated on.
    """
    config = config or TestConfig()
    seq_folds, seq_synth, seq_train, seq_boot = as_seed_sequence(seed).spawn(4)
    plan = make_fold_plan(sample.n, config.n_folds, np.random.default_rng(seq_folds))
    if generators is None:
        generators = fit_generators(sample, plan, train_cfg or TrainConfig(), seq_train,
                                    config.kernel_z, threads)
    elif isinstance(generators, tuple) and len(generators) == 2 and isinstance(generators[0], CondGenerator):
        generators = [generators] * plan.J
    stat = statistic_tj(sample, plan, generators, config.M, np.random.default_rng(seq_synth),
                        config.kernel_x, config.kernel_y, config.kernel_z, with_t0=with_t0)
    draws = wild_bootstrap(stat, config.B, np.random.default_rng(seq_boot))
    p = p_value(stat.t, draws)
    return TestOutcome(
        t=stat.t,
        draws=draws,
        p_value=p,
        reject=decide(p, config.gamma),
        gamma=config.gamma,
        per_fold=stat.per_fold,
        bandwidths=[f.kernels for f in stat.folds],
        config=config.to_dict(),
        t0=stat.t0,
    )
