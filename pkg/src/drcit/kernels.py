"""Kernel evaluation, Gram matrices and median-heuristic bandwidths.

Both kernels are translation invariant and bounded by one::

    gaussian   K(a, b) = exp(-||a - b||_2^2 / sigma)
    laplacian  K(a, b) = exp(-||a - b||_1 / sigma)

so ``sigma`` is measured in squared-l2 units for the gaussian kernel and in
l1 units for the laplacian kernel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import UsageError

FAMILIES = ("gaussian", "laplacian")
FALLBACK_BANDWIDTH = 1.0

_METRIC = {"gaussian": "sqeuclidean", "laplacian": "cityblock"}
_NORM_FOR_FAMILY = {"gaussian": "l2", "laplacian": "l1"}


class DegenerateBandwidthWarning(UserWarning):
    """All rows identical (or the median distance is zero); fallback bandwidth used."""


@dataclass(frozen=True)
class KernelSpec:
    family: str
    bandwidth: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        bw = float(self.bandwidth)
        if not (math.isfinite(bw) and bw > 0):
            raise UsageError(f"bandwidth must be a positive finite number, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", bw)

    @property
    def norm(self) -> str:
        return _NORM_FOR_FAMILY[self.family]

    def to_dict(self) -> dict:
        return {"family": self.family, "bandwidth": self.bandwidth}


def as_data_matrix(a, name: str = "data") -> np.ndarray:
    """Return ``a`` as a finite float64 matrix with rows as observations.

    One-dimensional input is read as a single column.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise UsageError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise UsageError(f"{name} must have at least one row and one column, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{name} contains non-finite entries")
    return arr


def _as_vector(a, name):
    v = np.asarray(a, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise UsageError(f"{name} contains non-finite entries")
    return v


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    if spec.family == "gaussian":
        dist = float(np.sum(diff * diff))
    else:
        dist = float(np.sum(np.abs(diff)))
    return math.exp(-dist / spec.bandwidth)


def pairwise_distances(A, B) -> tuple:
    """Return (l1, squared-l2) distance matrices between the rows of A and B."""
    A = as_data_matrix(A, "A")
    B = as_data_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise UsageError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    return cdist(A, B, "cityblock"), cdist(A, B, "sqeuclidean")


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Kernel matrix with entry (i, j) = K(A_i, B_j); ``B`` defaults to ``A``."""
    A = as_data_matrix(A, "A")
    B = A if B is None else as_data_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise UsageError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    dist = cdist(A, B, _METRIC[spec.family])
    return np.exp(-dist / spec.bandwidth)


def median_heuristic(A, norm: str = "l1") -> float:
    """Median pairwise distance over distinct pairs i < s.

    ``norm="l1"`` gives the laplacian bandwidth, ``norm="l2"`` the median of
    *squared* euclidean distances (the gaussian bandwidth convention, so the
    median pair has kernel value exp(-1) under either family).  If the median
    is zero, ``FALLBACK_BANDWIDTH`` is returned and a
    :class:`DegenerateBandwidthWarning` is emitted.
    """
    A = as_data_matrix(A, "A")
    if A.shape[0] < 2:
        raise UsageError("median heuristic needs at least 2 rows")
    if norm not in ("l1", "l2"):
        raise UsageError(f"norm must be 'l1' or 'l2', got {norm!r}")
    dists = pdist(A, "cityblock" if norm == "l1" else "sqeuclidean")
    med = float(np.median(dists))
    if not med > 0:
        warnings.warn(
            f"median pairwise distance is zero; using fallback bandwidth {FALLBACK_BANDWIDTH}",
            DegenerateBandwidthWarning,
            stacklevel=2,
        )
        return FALLBACK_BANDWIDTH
    return med


def median_kernel(family: str, A) -> KernelSpec:
    """KernelSpec of the given family with its bandwidth from ``median_heuristic``."""
    if family not in FAMILIES:
        raise UsageError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
    return KernelSpec(family, median_heuristic(A, _NORM_FOR_FAMILY[family]))


# ---------------------------------------------------------------------------
# Group sums  S[k, l] = sum_{m1, m2} K(P[k, m1], P[l, m2])
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _laplace_1d_group_sums(values, groups, n_groups, bandwidth):
    # values sorted ascending; exponentially decayed running sums per group,
    # swept once in each direction.
    n_pts = values.shape[0]
    out = np.zeros((n_groups, n_groups))
    acc = np.zeros(n_groups)
    for i in range(n_pts):
        if i > 0:
            decay = math.exp(-(values[i] - values[i - 1]) / bandwidth)
            for g in range(n_groups):
                acc[g] *= decay
        gi = groups[i]
        for g in range(n_groups):
            out[gi, g] += acc[g]
        acc[gi] += 1.0
    acc[:] = 0.0
    for i in range(n_pts - 1, -1, -1):
        if i < n_pts - 1:
            decay = math.exp(-(values[i + 1] - values[i]) / bandwidth)
            for g in range(n_groups):
                acc[g] *= decay
        gi = groups[i]
        for g in range(n_groups):
            out[gi, g] += acc[g]
        acc[gi] += 1.0
    for i in range(n_pts):
        out[groups[i], groups[i]] += 1.0
    return out


def group_kernel_sums(spec: KernelSpec, P, max_block: int = 4_000_000) -> np.ndarray:
    """Sum the kernel over every pair of draws from groups k and l.

    ``P`` has shape (n, M, d): ``M`` draws in each of ``n`` groups.  Returns the
    (n, n) matrix of unnormalised sums, symmetrised exactly.  One-dimensional
    laplacian data uses an O(n^2 M) sorted sweep; everything else is computed
    blockwise from explicit kernel evaluations.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 3:
        raise UsageError(f"expected draws of shape (n, M, d), got {P.shape}")
    n, M, d = P.shape
    if spec.family == "laplacian" and d == 1:
        flat = P.reshape(n * M)
        order = np.argsort(flat, kind="stable")
        groups = np.repeat(np.arange(n, dtype=np.int64), M)[order]
        S = _laplace_1d_group_sums(flat[order], groups, n, spec.bandwidth)
    else:
        flat = P.reshape(n * M, d)
        rows_per_block = max(1, max_block // (n * M * M))
        S = np.empty((n, n))
        for start in range(0, n, rows_per_block):
            stop = min(n, start + rows_per_block)
            K = gram(spec, flat[start * M : stop * M], flat)
            S[start:stop] = K.reshape(stop - start, M, n, M).sum(axis=(1, 3))
    return (S + S.T) / 2.0
