"""Simulation designs and their exact conditional samplers.

Three designs are provided:

* ``bernoulli_mixture(p)``: Z = e3, Y = Z + e1, X = Z + d*e1 + (1-d)*e2 with
  d ~ Bernoulli(p).  X | Z and Y | Z are N(Z, 1) for every p; p = 0 is the
  null, p > 0 couples X and Y through the shared e1.
* ``post_nonlinear(d_z, b)``: Y = sin(a_f'Z + e_f), X = cos(a_g'Z + b*Y + e_g),
  Z ~ N(0, I), e ~ N(0, 0.25), coefficient vectors uniform on [0, 1]^d_z and
  scaled to unit l1 norm (drawn once per dataset).  b = 0 is the null.
* ``weak_ci(alternative)``: binary X, Y, Z.  The null draws all three as
  independent fair coins; the alternative has X, Y marginally independent but
  dependent given Z through two 2x2 tables.

Every design returns oracle generators that sample the true marginal
conditionals P(X | Z) and P(Y | Z) from standard-normal noise.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import UsageError
from .generator import CondGenerator
from .kernels import as_data_matrix

ORACLE_LATENT_DIM = 2
DGP_KINDS = ("bernoulli_mixture", "post_nonlinear", "weak_ci")

# Pr(X = i, Y = j | Z = z) for the weak_ci alternative, indexed [z][i][j].
WEAK_CI_TABLES = np.array(
    [
        [[1 / 6, 1 / 3], [1 / 3, 1 / 6]],
        [[1 / 3, 1 / 6], [1 / 6, 1 / 3]],
    ]
)


@dataclass(frozen=True, eq=False)
class TripleSample:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = as_data_matrix(self.x, "x")
        y = as_data_matrix(self.y, "y")
        z = as_data_matrix(self.z, "z")
        if not (x.shape[0] == y.shape[0] == z.shape[0]):
            raise UsageError(f"row counts differ: x {x.shape[0]}, y {y.shape[0]}, z {z.shape[0]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "TripleSample":
        return TripleSample(self.x[idx], self.y[idx], self.z[idx])


# ---------------------------------------------------------------------------
# Oracle generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalShiftOracle(CondGenerator):
    """X | Z = z ~ N(z + shift, 1), one output column per z column."""

    z_dim: int = 1
    shift: float = 0.0
    name = "normal_shift"

    @property
    def latent_dim(self):
        return max(ORACLE_LATENT_DIM, self.z_dim)

    @property
    def output_dim(self):
        return self.z_dim

    def _map(self, z, eta):
        n, M, _ = eta.shape
        out = z[:, None, :] + eta[:, :, : self.z_dim] + self.shift
        return out.reshape(n * M, self.z_dim)

    def describe(self):
        return {"kind": self.name, "shift": self.shift, "z_dim": self.z_dim}


@dataclass(frozen=True, eq=False)
class PostNonlinearYOracle(CondGenerator):
    """Y | Z = z drawn as sin(a_f'z + sd*eta_1) + shift."""

    a_f: np.ndarray = field(default_factory=lambda: np.ones(1))
    noise_sd: float = 0.5
    shift: float = 0.0
    name = "post_nonlinear_y"
    latent_dim = ORACLE_LATENT_DIM
    output_dim = 1

    @property
    def z_dim(self):
        return len(self.a_f)

    def _map(self, z, eta):
        lin = (z @ self.a_f)[:, None]
        return (np.sin(lin + self.noise_sd * eta[:, :, 0]) + self.shift).reshape(-1, 1)

    def describe(self):
        return {"kind": self.name, "shift": self.shift, "noise_sd": self.noise_sd}


@dataclass(frozen=True, eq=False)
class PostNonlinearXOracle(CondGenerator):
    """X | Z = z drawn as cos(a_g'z + b*Y' + sd*eta_1) + shift, Y' = sin(a_f'z + sd*eta_2).

    The inner Y' is a fresh conditional draw, so the output follows the
    marginal law of X given Z even when b != 0.
    """

    a_f: np.ndarray = field(default_factory=lambda: np.ones(1))
    a_g: np.ndarray = field(default_factory=lambda: np.ones(1))
    b: float = 0.0
    noise_sd: float = 0.5
    shift: float = 0.0
    name = "post_nonlinear_x"
    latent_dim = ORACLE_LATENT_DIM
    output_dim = 1

    @property
    def z_dim(self):
        return len(self.a_g)

    def _map(self, z, eta):
        lin_f = (z @ self.a_f)[:, None]
        lin_g = (z @ self.a_g)[:, None]
        y_inner = np.sin(lin_f + self.noise_sd * eta[:, :, 1])
        return (np.cos(lin_g + self.b * y_inner + self.noise_sd * eta[:, :, 0]) + self.shift).reshape(-1, 1)

    def describe(self):
        return {"kind": self.name, "b": self.b, "shift": self.shift, "noise_sd": self.noise_sd}


@dataclass(frozen=True, eq=False)
class BernoulliOracle(CondGenerator):
    """Binary output 1{eta_1 > Phi^-1(1 - q)} with q = prob + shift, ignoring z."""

    prob: float = 0.5
    shift: float = 0.0
    name = "bernoulli"
    latent_dim = ORACLE_LATENT_DIM
    output_dim = 1
    z_dim = None

    def __post_init__(self):
        q = self.prob + self.shift
        if not 0.0 <= q <= 1.0:
            raise UsageError(f"bernoulli oracle probability {q} outside [0, 1]")

    def _map(self, z, eta):
        threshold = norm.ppf(1.0 - (self.prob + self.shift))
        return (eta[:, :, 0] > threshold).astype(np.float64).reshape(-1, 1)

    def describe(self):
        return {"kind": self.name, "prob": self.prob, "shift": self.shift}


ORACLE_TYPES = (NormalShiftOracle, PostNonlinearYOracle, PostNonlinearXOracle, BernoulliOracle)


def corrupt_oracle(gen: CondGenerator, shift: float) -> CondGenerator:
    """A deliberately wrong oracle: outputs moved by ``shift``.

    Continuous oracles add ``shift`` to every draw; the Bernoulli oracle moves
    its success probability by ``shift`` instead.
    """
    if not isinstance(gen, ORACLE_TYPES):
        raise UsageError(f"only oracle generators can be corrupted, got {type(gen).__name__}")
    return dataclasses.replace(gen, shift=gen.shift + float(shift))


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    p: float = 0.0
    d_z: int = 1
    b: float = 0.0
    alternative: bool = False

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise UsageError(f"unknown dgp {self.kind!r}; expected one of {DGP_KINDS}")
        if not 0.0 <= self.p <= 1.0:
            raise UsageError("p must lie in [0, 1]")
        if self.d_z < 1:
            raise UsageError("d_z must be >= 1")

    @property
    def is_null(self) -> bool:
        if self.kind == "bernoulli_mixture":
            return self.p == 0.0
        if self.kind == "post_nonlinear":
            return self.b == 0.0
        return not self.alternative

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class DgpDraw:
    sample: TripleSample
    oracle_x: CondGenerator
    oracle_y: CondGenerator
    coefficients: dict = field(default_factory=dict)


def _check_n(n):
    if n < 2:
        raise UsageError("n must be >= 2")


def gen_bernoulli_mixture(n: int, p: float, rng) -> DgpDraw:
    _check_n(n)
    if not 0.0 <= p <= 1.0:
        raise UsageError("p must lie in [0, 1]")
    e = rng.standard_normal((3, n))
    delta = rng.random(n) < p
    z = e[2]
    y = z + e[0]
    x = z + np.where(delta, e[0], e[1])
    return DgpDraw(TripleSample(x, y, z), NormalShiftOracle(1), NormalShiftOracle(1))


def gen_postnonlinear(n: int, d_z: int, b: float, rng) -> DgpDraw:
    _check_n(n)
    if d_z < 1:
        raise UsageError("d_z must be >= 1")
    a_f = rng.random(d_z)
    a_g = rng.random(d_z)
    a_f = a_f / np.sum(np.abs(a_f))
    a_g = a_g / np.sum(np.abs(a_g))
    z = rng.standard_normal((n, d_z))
    e_f = 0.5 * rng.standard_normal(n)
    e_g = 0.5 * rng.standard_normal(n)
    y = np.sin(z @ a_f + e_f)
    x = np.cos(z @ a_g + b * y + e_g)
    return DgpDraw(
        TripleSample(x, y, z),
        PostNonlinearXOracle(a_f, a_g, float(b)),
        PostNonlinearYOracle(a_f),
        {"a_f": a_f, "a_g": a_g},
    )


def gen_weakci(n: int, alternative: bool, rng) -> DgpDraw:
    _check_n(n)
    if not alternative:
        x, y, z = (rng.random((3, n)) < 0.5).astype(np.float64)
    else:
        z = (rng.random(n) < 0.5).astype(np.int64)
        cells = WEAK_CI_TABLES.reshape(2, 4)
        u = rng.random(n)
        cell = (u[:, None] >= np.cumsum(cells[z], axis=1)[:, :3]).sum(axis=1)
        x, y = (cell // 2).astype(np.float64), (cell % 2).astype(np.float64)
        z = z.astype(np.float64)
    return DgpDraw(TripleSample(x, y, z), BernoulliOracle(), BernoulliOracle())


def generate(spec: DgpSpec, n: int, rng) -> DgpDraw:
    if spec.kind == "bernoulli_mixture":
        return gen_bernoulli_mixture(n, spec.p, rng)
    if spec.kind == "post_nonlinear":
        return gen_postnonlinear(n, spec.d_z, spec.b, rng)
    return gen_weakci(n, spec.alternative, rng)
