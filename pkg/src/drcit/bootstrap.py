"""Wild-bootstrap calibration of the cross-fitted statistic.

Each replicate draws one standard-normal multiplier per observation and
reweights every off-diagonal term (k, l) of every fold by e_k * e_l.  The
stored fold products are reused, so no kernel is recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .statistic import StatisticResult, quad_forms


@dataclass
class BootstrapDraws:
    values: np.ndarray
    seed: object = None

    @property
    def B(self) -> int:
        return len(self.values)


@dataclass
class TestOutcome:
    __test__ = False  # not a pytest class

    t: float
    draws: BootstrapDraws
    p_value: float
    reject: bool
    gamma: float
    per_fold: list = field(default_factory=list)
    bandwidths: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    t0: float | None = None


def wild_bootstrap(stat: StatisticResult, B: int, rng=None, multipliers=None) -> BootstrapDraws:
    """B bootstrap replicates of the statistic.

    ``multipliers`` (shape (B, n), indexed by original observation) overrides
    the random draw; it exists for exact checks.  Otherwise the whole (B, n)
    multiplier matrix is drawn up front from ``rng``.
    """
    if B < 1:
        raise UsageError("B must be >= 1")
    n = sum(len(f.index) for f in stat.folds)
    if multipliers is None:
        if rng is None:
            raise UsageError("need an rng or explicit multipliers")
        E = rng.standard_normal((B, n))
    else:
        E = np.asarray(multipliers, dtype=np.float64)
        if E.shape != (B, n):
            raise UsageError(f"multipliers must have shape {(B, n)}, got {E.shape}")
    total = np.zeros(B)
    for f in stat.folds:
        nj = len(f.index)
        Ej = np.ascontiguousarray(E[:, f.index])
        total += quad_forms(np.ascontiguousarray(f.H), Ej) / (nj * (nj - 1))
    return BootstrapDraws(total / len(stat.folds))


def p_value(t: float, draws: BootstrapDraws) -> float:
    values = draws.values if isinstance(draws, BootstrapDraws) else np.asarray(draws)
    if len(values) < 1:
        raise UsageError("need at least one bootstrap draw")
    return float(np.count_nonzero(values > t)) / len(values)


def decide(p: float, gamma: float) -> bool:
    if not 0.0 < gamma < 1.0:
        raise UsageError(f"gamma must lie in (0, 1), got {gamma}")
    return bool(p < gamma)
