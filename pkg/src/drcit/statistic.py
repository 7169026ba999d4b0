"""Cross-fitted conditional-independence statistic and its exact references.

For one fold with real rows (X_k, Y_k, Z_k) and M synthetic draws per row,

    Uhat(k, l) = K_X(X_k, X_l) - mean_m K_X(X_k, Xhat_l^m)
                 - mean_m K_X(X_l, Xhat_k^m) + mean_{m1,m2} K_X(Xhat_k^m1, Xhat_l^m2)

and Vhat is the same on the Y side.  The fold value is the off-diagonal mean
of Uhat * Vhat * K_Z and the cross-fitted statistic averages the folds.

The finite-support helpers (``FiniteJointLaw`` and friends) compute the same
quantities with exact conditional expectations, for checking and for
robustness experiments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .dgp import WEAK_CI_TABLES, TripleSample
from .errors import ConsistencyError, UsageError
from .generator import synthesize
from .kernels import KernelSpec, as_data_matrix, gram, group_kernel_sums, median_kernel

# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


@dataclass
class FoldPlan:
    folds: list  # sorted index arrays, disjoint and exhaustive

    @property
    def J(self) -> int:
        return len(self.folds)

    @property
    def n(self) -> int:
        return int(sum(len(f) for f in self.folds))

    def complement(self, j: int) -> np.ndarray:
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != j]))


def make_fold_plan(n: int, J: int, rng) -> FoldPlan:
    """Random split of range(n) into J folds whose sizes differ by at most one."""
    if J < 1:
        raise UsageError("number of folds must be >= 1")
    if n // J < 2:
        raise UsageError(f"fold of size < 2: n={n} cannot be split into {J} folds")
    perm = rng.permutation(n)
    return FoldPlan([np.sort(part) for part in np.array_split(perm, J)])


# ---------------------------------------------------------------------------
# Uhat / Vhat and the fold statistic
# ---------------------------------------------------------------------------


def _uhat_parts(x, synth, k: KernelSpec):
    """(K, C, S) with C[k, l] = mean_m K(x_k, s_l^m) and S the mean over draw pairs."""
    x = as_data_matrix(x, "x")
    synth = np.asarray(synth, dtype=np.float64)
    if synth.ndim == 2:
        synth = synth[:, :, None]
    n = x.shape[0]
    if synth.ndim != 3 or synth.shape[0] != n or synth.shape[2] != x.shape[1]:
        raise UsageError(f"synthetic draws {synth.shape} do not match fold data {x.shape}")
    M = synth.shape[1]
    K = gram(k, x)
    C = gram(k, x, synth.reshape(n * M, -1)).reshape(n, n, M).mean(axis=2)
    S = group_kernel_sums(k, synth) / (M * M)
    return K, C, S


def uhat_matrix(x_fold, synth, kernel: KernelSpec) -> np.ndarray:
    """Uhat for one fold; ``synth`` holds the M draws per row, shape (n, M, d)."""
    K, C, S = _uhat_parts(x_fold, synth, kernel)
    return K - (C + C.T) + S


vhat_matrix = uhat_matrix


@numba.njit(cache=True)
def quad_forms(H, E):
    """out[b] = sum_k E[b, k] * sum_l H[k, l] * E[b, l], in a fixed summation order."""
    n_rep, n = E.shape
    out = np.empty(n_rep)
    for b in range(n_rep):
        total = 0.0
        for k in range(n):
            row = 0.0
            for l in range(n):
                row += H[k, l] * E[b, l]
            total += E[b, k] * row
        out[b] = total
    return out


def _check_square(*mats):
    shape = mats[0].shape
    if len(shape) != 2 or shape[0] != shape[1] or any(m.shape != shape for m in mats):
        raise UsageError("U, V and K_Z must be square matrices of equal shape")
    if shape[0] < 2:
        raise UsageError("fold of size < 2")


def fold_products(U, V, KZ) -> np.ndarray:
    """Elementwise U * V * K_Z with the diagonal zeroed."""
    U, V, KZ = (np.asarray(a, dtype=np.float64) for a in (U, V, KZ))
    _check_square(U, V, KZ)
    H = U * V * KZ
    np.fill_diagonal(H, 0.0)
    return H


def off_diagonal_mean(H) -> float:
    n = H.shape[0]
    return float(quad_forms(np.ascontiguousarray(H), np.ones((1, n)))[0]) / (n * (n - 1))


def fold_statistic(U, V, KZ) -> float:
    return off_diagonal_mean(fold_products(U, V, KZ))


@dataclass
class FoldTerms:
    index: np.ndarray
    U: np.ndarray
    V: np.ndarray
    KZ: np.ndarray
    H: np.ndarray  # U * V * KZ, zero diagonal
    kernels: dict
    value: float
    t0_value: float | None = None


@dataclass
class StatisticResult:
    t: float
    folds: list = field(default_factory=list)  # FoldTerms per fold

    @property
    def per_fold(self) -> list:
        return [f.value for f in self.folds]

    @property
    def t0(self) -> float | None:
        if any(f.t0_value is None for f in self.folds):
            return None
        return sum(f.t0_value for f in self.folds) / len(self.folds)


def _resolve_kernel(choice, data) -> KernelSpec:
    if isinstance(choice, KernelSpec):
        return choice
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return median_kernel(choice, data)


def statistic_tj(sample: TripleSample, plan: FoldPlan, generators, M: int, rng,
                 kernel_x="laplacian", kernel_y="laplacian", kernel_z="laplacian",
                 with_t0: bool = False) -> StatisticResult:
    """Cross-fitted statistic over the folds of ``plan``.

    ``generators[j]`` is the (X, Y) generator pair for fold j, which must have
    been fitted without fold j's rows.  Kernel arguments are either a family
    name (bandwidth from the median heuristic on the fold's own real data) or
    a fixed :class:`KernelSpec`.  ``with_t0`` additionally records the
    non-doubly-robust plug-in statistic on the same draws.
    """
    if len(generators) != plan.J:
        raise UsageError(f"need one generator pair per fold: {plan.J} folds, {len(generators)} pairs")
    if plan.n != sample.n:
        raise UsageError("fold plan does not cover the sample")
    folds = []
    for j, idx in enumerate(plan.folds):
        if len(idx) < 2:
            raise UsageError("fold of size < 2")
        part = sample.subset(idx)
        kx = _resolve_kernel(kernel_x, part.x)
        ky = _resolve_kernel(kernel_y, part.y)
        kz = _resolve_kernel(kernel_z, part.z)
        gen_x, gen_y = generators[j]
        synth = synthesize(gen_x, gen_y, part.z, M, rng)
        Kx, Cx, Sx = _uhat_parts(part.x, synth.x, kx)
        Ky, Cy, Sy = _uhat_parts(part.y, synth.y, ky)
        U = Kx - (Cx + Cx.T) + Sx
        V = Ky - (Cy + Cy.T) + Sy
        KZ = gram(kz, part.z)
        H = fold_products(U, V, KZ)
        t0 = None
        if with_t0:
            H0 = KZ * (Kx * Ky - Cx.T * Cy.T - Cx * Cy + Sx * Sy)
            np.fill_diagonal(H0, 0.0)
            t0 = off_diagonal_mean(H0)
        kernels = {"x": kx.to_dict(), "y": ky.to_dict(), "z": kz.to_dict()}
        folds.append(FoldTerms(idx, U, V, KZ, H, kernels, off_diagonal_mean(H), t0))
    t = sum(f.value for f in folds) / len(folds)
    return StatisticResult(t, folds)


# ---------------------------------------------------------------------------
# Finite-support laws and exact references
# ---------------------------------------------------------------------------


def _unique_rows(a):
    uniq, inverse = np.unique(a, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def _match_rows(rows, table):
    out = np.empty(rows.shape[0], dtype=np.int64)
    for i, r in enumerate(rows):
        hit = np.flatnonzero(np.all(table == r, axis=1))
        if hit.size == 0:
            raise UsageError(f"value {r.tolist()} is outside the law's support")
        out[i] = hit[0]
    return out


class FiniteJointLaw:
    """A joint law of (X, Y, Z) on finitely many support points."""

    def __init__(self, x, y, z, probs):
        self.x = as_data_matrix(x, "x")
        self.y = as_data_matrix(y, "y")
        self.z = as_data_matrix(z, "z")
        p = np.asarray(probs, dtype=np.float64).reshape(-1)
        if not (self.x.shape[0] == self.y.shape[0] == self.z.shape[0] == p.shape[0]):
            raise UsageError("support arrays and probabilities must have equal length")
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0, rtol=0, atol=1e-12):
            raise UsageError("probabilities must be nonnegative and sum to 1")
        self.probs = p
        self.xu, self._xi = _unique_rows(self.x)
        self.yu, self._yi = _unique_rows(self.y)
        self.zu, self._zi = _unique_rows(self.z)
        nz = self.zu.shape[0]
        self.pz = np.bincount(self._zi, weights=p, minlength=nz)
        # cond_x[r, a] = P(X = xu[a] | Z = zu[r]); rows with P(Z) = 0 stay zero
        self.cond_x = np.zeros((nz, self.xu.shape[0]))
        self.cond_y = np.zeros((nz, self.yu.shape[0]))
        np.add.at(self.cond_x, (self._zi, self._xi), p)
        np.add.at(self.cond_y, (self._zi, self._yi), p)
        pos = self.pz > 0
        self.cond_x[pos] /= self.pz[pos, None]
        self.cond_y[pos] /= self.pz[pos, None]

    @classmethod
    def from_table(cls, table, x_values=(0.0, 1.0), y_values=(0.0, 1.0), z_values=(0.0, 1.0)):
        """Law from a probability array indexed [z][x][y]."""
        table = np.asarray(table, dtype=np.float64)
        pts = [(xv, yv, zv, table[c, a, b])
               for c, zv in enumerate(z_values)
               for a, xv in enumerate(x_values)
               for b, yv in enumerate(y_values)]
        x, y, z, p = (np.array(col) for col in zip(*pts))
        return cls(x, y, z, p)

    @classmethod
    def weak_ci(cls, alternative: bool) -> "FiniteJointLaw":
        """The binary weak-CI design: fair independent coins, or the two 2x2 tables."""
        if alternative:
            return cls.from_table(0.5 * WEAK_CI_TABLES)
        return cls.from_table(np.full((2, 2, 2), 1 / 8))

    def sample(self, n: int, rng) -> TripleSample:
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        return TripleSample(self.x[idx], self.y[idx], self.z[idx])

    def check_support(self, sample: TripleSample):
        pts = np.hstack([self.x, self.y, self.z])[self.probs > 0]
        _match_rows(np.hstack([sample.x, sample.y, sample.z]), pts)


def _exact_terms(values, z, cond_law: FiniteJointLaw, side: str, kernel: KernelSpec):
    """G[k, l] = E[K(W, w_l) | Z = z_k] and D[k, l] = E[K(W, W') | Z = z_k, Z' = z_l]."""
    support = cond_law.xu if side == "x" else cond_law.yu
    table = cond_law.cond_x if side == "x" else cond_law.cond_y
    r = _match_rows(z, cond_law.zu)
    P = table[r]  # (n, a)
    G = P @ gram(kernel, support, values)
    D = P @ gram(kernel, support) @ P.T
    return G, D


def _oracle_parts(sample, law, kx, ky, kz, x_law, y_law):
    law.check_support(sample)
    Kx = gram(kx, sample.x)
    Ky = gram(ky, sample.y)
    KZ = gram(kz, sample.z)
    Gx, Dx = _exact_terms(sample.x, sample.z, law if x_law is None else x_law, "x", kx)
    Gy, Dy = _exact_terms(sample.y, sample.z, law if y_law is None else y_law, "y", ky)
    return Kx, Ky, KZ, Gx, Dx, Gy, Dy


def oracle_t_star(sample: TripleSample, law: FiniteJointLaw, kx: KernelSpec, ky: KernelSpec,
                  kz: KernelSpec, x_law: FiniteJointLaw | None = None,
                  y_law: FiniteJointLaw | None = None) -> float:
    """Doubly robust U-statistic with exact conditional expectations under ``law``.

    ``x_law`` / ``y_law`` substitute the conditional law of one side, which
    gives the misspecified plug-in variant.
    """
    Kx, Ky, KZ, Gx, Dx, Gy, Dy = _oracle_parts(sample, law, kx, ky, kz, x_law, y_law)
    U = Kx - Gx - Gx.T + Dx
    V = Ky - Gy - Gy.T + Dy
    return off_diagonal_mean(fold_products(U, V, KZ))


def oracle_t0_star(sample: TripleSample, law: FiniteJointLaw, kx: KernelSpec, ky: KernelSpec,
                   kz: KernelSpec, x_law: FiniteJointLaw | None = None,
                   y_law: FiniteJointLaw | None = None) -> float:
    """The non-doubly-robust counterpart built from the four product terms."""
    Kx, Ky, KZ, Gx, Dx, Gy, Dy = _oracle_parts(sample, law, kx, ky, kz, x_law, y_law)
    H = KZ * (Kx * Ky - Gx * Gy - Gx.T * Gy.T + Dx * Dy)
    np.fill_diagonal(H, 0.0)
    return off_diagonal_mean(H)


def population_mmdci_forms(law: FiniteJointLaw, kx, ky, kz):
    p = law.probs
    Kx = gram(kx, law.x)
    Ky = gram(ky, law.y)
    KZ = gram(kz, law.z)
    # G[s, t] = E[K(X, x_t) | Z = z_s]; D[s, t] = E[K(X, X') | z_s, z_t]
    Px = law.cond_x[law._zi]
    Py = law.cond_y[law._zi]
    Gx = Px @ gram(kx, law.xu, law.x)
    Gy = Py @ gram(ky, law.yu, law.y)
    Dx = Px @ gram(kx, law.xu) @ Px.T
    Dy = Py @ gram(ky, law.yu) @ Py.T
    w = np.outer(p, p)

    expanded = np.sum(w * KZ * (Kx * Ky - Gx.T * Gy.T - Gx * Gy + Dx * Dy))
    U = Kx - Gx - Gx.T + Dx
    V = Ky - Gy - Gy.T + Dy
    product = np.sum(w * U * V * KZ)

    # squared MMD between P and the law with X, Y independent given Z
    grid = [(a, c, r) for r in range(law.zu.shape[0])
            for a in range(law.xu.shape[0]) for c in range(law.yu.shape[0])]
    a_idx, c_idx, r_idx = (np.array(v) for v in zip(*grid))
    q = law.pz[r_idx] * law.cond_x[r_idx, a_idx] * law.cond_y[r_idx, c_idx]
    p_grid = np.zeros(len(grid))
    lookup = {g: i for i, g in enumerate(grid)}
    for s in range(len(p)):
        p_grid[lookup[(law._xi[s], law._yi[s], law._zi[s])]] += p[s]
    diff = p_grid - q
    K0 = (gram(kx, law.xu[a_idx]) * gram(ky, law.yu[c_idx]) * gram(kz, law.zu[r_idx]))
    mmd = float(diff @ K0 @ diff)
    return float(expanded), float(product), mmd


def population_mmdci_discrete(law: FiniteJointLaw, kx: KernelSpec, ky: KernelSpec, kz: KernelSpec,
                              tol: float = 1e-10) -> float:
    """Population CI measure by exact enumeration, cross-checked three ways.

    Computes the four-term expansion, the product form E[U V K_Z] and the
    squared MMD against the conditionally independent coupling; raises
    :class:`ConsistencyError` if any two differ by more than ``tol``.
    """
    expanded, product, mmd = population_mmdci_forms(law, kx, ky, kz)
    spread = max(expanded, product, mmd) - min(expanded, product, mmd)
    if spread > tol:
        raise ConsistencyError(
            f"characterizations disagree: expansion {expanded!r}, product {product!r}, mmd {mmd!r}"
        )
    return product
