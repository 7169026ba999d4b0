import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drcit.dgp import TripleSample
from drcit.errors import ConsistencyError, UsageError
from drcit.generator import CondGenerator
from drcit.kernels import KernelSpec
from drcit.statistic import (
    FiniteJointLaw,
    FoldPlan,
    fold_statistic,
    make_fold_plan,
    oracle_t0_star,
    oracle_t_star,
    population_mmdci_discrete,
    population_mmdci_forms,
    statistic_tj,
    uhat_matrix,
    vhat_matrix,
)

from reference import ci_law, naive_statistic, naive_uhat, random_law, random_setup

LAP = KernelSpec("laplacian", 1.0)


class Echo(CondGenerator):
    """Test rig: returns a fixed row per z value, so synthetic draws equal the real data."""

    name = "echo"
    latent_dim = 1

    def __init__(self, z, w):
        self.table = {tuple(r): v for r, v in zip(np.asarray(z), np.asarray(w))}
        self.output_dim = np.asarray(w).shape[1]

    def _map(self, z, eta):
        M = eta.shape[1]
        return np.repeat(np.array([self.table[tuple(r)] for r in z]), M, axis=0)


def test_fold_plan_partition():
    plan = make_fold_plan(11, 3, np.random.default_rng(0))
    sizes = sorted(len(f) for f in plan.folds)
    assert sizes == [3, 4, 4]
    assert np.array_equal(np.sort(np.concatenate(plan.folds)), np.arange(11))
    assert np.array_equal(plan.complement(0), np.sort(np.concatenate(plan.folds[1:])))


def test_fold_plan_too_small():
    with pytest.raises(UsageError, match="fold of size < 2"):
        make_fold_plan(3, 2, np.random.default_rng(0))


def test_uhat_hand_example():
    x = np.array([0.0, 1.0])
    synth = np.array([[0.0], [0.0]])
    U = uhat_matrix(x, synth, LAP)
    e = math.exp(-1)
    assert U[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert U[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert U[1, 1] == pytest.approx(2 - 2 * e, rel=1e-14)


def test_uhat_vanishes_when_synthetic_equals_real():
    x = np.random.default_rng(0).standard_normal((5, 2))
    synth = np.repeat(x[:, None, :], 4, axis=1)
    np.testing.assert_allclose(uhat_matrix(x, synth, LAP), 0.0, atol=1e-14)
    np.testing.assert_allclose(vhat_matrix(x, synth, KernelSpec("gaussian", 2.0)), 0.0, atol=1e-14)


@pytest.mark.parametrize("family,d", [("laplacian", 1), ("laplacian", 2), ("gaussian", 1)])
def test_uhat_matches_loop(family, d):
    rng = np.random.default_rng(4)
    x, s = rng.standard_normal((6, d)), rng.standard_normal((6, 3, d))
    k = KernelSpec(family, 0.7)
    U = uhat_matrix(x, s, k)
    np.testing.assert_allclose(U, naive_uhat(x, s, k), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(U, U.T)


def test_uhat_shape_mismatch():
    with pytest.raises(UsageError):
        uhat_matrix(np.zeros((4, 1)), np.zeros((3, 2, 1)), LAP)


def test_fold_statistic_small_cases():
    a, b, c = 0.3, -1.5, 0.8
    U = np.array([[9.0, a], [a, 9.0]])
    V = np.array([[9.0, b], [b, 9.0]])
    KZ = np.array([[1.0, c], [c, 1.0]])
    assert fold_statistic(U, V, KZ) == pytest.approx(a * b * c, rel=1e-15)
    assert fold_statistic(np.zeros((3, 3)), np.ones((3, 3)), np.ones((3, 3))) == 0.0
    with pytest.raises(UsageError):
        fold_statistic(np.zeros((3, 3)), np.zeros((2, 2)), np.zeros((3, 3)))


def test_fold_statistic_matches_double_loop():
    rng = np.random.default_rng(0)
    U, V, KZ = (rng.standard_normal((10, 10)) for _ in range(3))
    ref = sum(U[a, b] * V[a, b] * KZ[a, b] for a in range(10) for b in range(10) if a != b) / 90
    assert fold_statistic(U, V, KZ) == pytest.approx(ref, rel=1e-14, abs=1e-14)


@pytest.mark.parametrize("seed,n,J,M", [(0, 40, 2, 3), (1, 17, 3, 2), (2, 9, 1, 4)])
def test_statistic_matches_naive(seed, n, J, M):
    sample, plan, gens = random_setup(seed, n, J, M)
    kx, ky, kz = KernelSpec("laplacian", 0.9), KernelSpec("gaussian", 1.7), KernelSpec("laplacian", 1.2)
    res = statistic_tj(sample, plan, gens, M, np.random.default_rng(99), kx, ky, kz)
    ref = naive_statistic(sample, plan, gens, M, 99, kx, ky, kz)
    assert abs(res.t - ref) <= 1e-10 * max(1.0, abs(ref))


def test_statistic_with_median_bandwidths_matches_naive():
    from drcit.kernels import median_heuristic

    sample, plan, gens = random_setup(3, 20, 2, 3)
    res = statistic_tj(sample, plan, gens, 3, np.random.default_rng(1))
    for f in res.folds:
        assert f.kernels["x"]["bandwidth"] == median_heuristic(sample.x[f.index], "l1")
    specs = [f.kernels for f in res.folds]
    # rerun with the same bandwidths fixed explicitly, fold by fold
    for j, f in enumerate(res.folds):
        sub = FoldPlan([np.arange(len(f.index))])
        part = sample.subset(f.index)
        k = {s: KernelSpec(**specs[j][s]) for s in "xyz"}
        one = statistic_tj(part, sub, [gens[j]], 3, np.random.default_rng(5), k["x"], k["y"], k["z"])
        assert one.t == pytest.approx(naive_statistic(part, sub, [gens[j]], 3, 5, k["x"], k["y"], k["z"]),
                                      rel=1e-10)


def test_perfect_generators_give_zero():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((12, 1))
    sample = TripleSample(z + rng.standard_normal((12, 1)), z + rng.standard_normal((12, 1)), z)
    plan = make_fold_plan(12, 2, rng)
    gens = [(Echo(sample.z, sample.x), Echo(sample.z, sample.y))] * 2
    res = statistic_tj(sample, plan, gens, 3, rng)
    assert abs(res.t) < 1e-15


def test_single_fold_is_fold_statistic():
    sample, _, gens = random_setup(5, 15, 1, 2)
    plan = FoldPlan([np.arange(15)])
    res = statistic_tj(sample, plan, gens, 2, np.random.default_rng(0))
    f = res.folds[0]
    assert res.t == fold_statistic(f.U, f.V, f.KZ)


def test_statistic_rejects_mismatched_inputs():
    sample, plan, gens = random_setup(0, 10, 2, 2)
    with pytest.raises(UsageError):
        statistic_tj(sample, plan, gens[:1], 2, np.random.default_rng(0))
    with pytest.raises(UsageError):
        statistic_tj(sample, FoldPlan([np.arange(9), np.array([9])]), gens, 2, np.random.default_rng(0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(4, 12))
def test_statistic_permutation_invariant(seed, n):
    # permuting rows inside the single fold together with their draws
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 1))
    x, y = z + rng.standard_normal((n, 1)), rng.standard_normal((n, 1))
    sx, sy = rng.standard_normal((n, 3, 1)), rng.standard_normal((n, 3, 1))
    perm = rng.permutation(n)
    U, V = uhat_matrix(x, sx, LAP), vhat_matrix(y, sy, LAP)
    Up, Vp = uhat_matrix(x[perm], sx[perm], LAP), vhat_matrix(y[perm], sy[perm], LAP)
    from drcit.kernels import gram

    t = fold_statistic(U, V, gram(LAP, z))
    tp = fold_statistic(Up, Vp, gram(LAP, z[perm]))
    assert tp == pytest.approx(t, rel=1e-12, abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_uhat_bounded_and_statistic_bounded(seed):
    sample, plan, gens = random_setup(seed, 10, 2, 2)
    res = statistic_tj(sample, plan, gens, 2, np.random.default_rng(seed))
    for f in res.folds:
        assert np.all(np.abs(f.U) <= 4) and np.all(np.abs(f.V) <= 4)
        np.testing.assert_array_equal(f.U, f.U.T)
        assert abs(f.value) <= 16


# ---------------------------------------------------------------------------
# finite laws
# ---------------------------------------------------------------------------


def test_population_forms_agree_on_random_laws():
    rng = np.random.default_rng(0)
    for i in range(30):
        law = random_law(rng, zero_some=i % 3 == 0)
        kx, ky, kz = (KernelSpec(rng.choice(["laplacian", "gaussian"]), rng.uniform(0.3, 3)) for _ in range(3))
        expanded, product, mmd = population_mmdci_forms(law, kx, ky, kz)
        assert abs(expanded - product) <= 1e-12
        assert abs(mmd - product) <= 1e-12
        assert population_mmdci_discrete(law, kx, ky, kz) >= -1e-15


def test_population_zero_on_ci_laws():
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert abs(population_mmdci_discrete(ci_law(rng), LAP, LAP, LAP)) <= 1e-12


def test_population_point_mass_and_weak_ci():
    point = FiniteJointLaw([1.0], [2.0], [0.0], [1.0])
    assert population_mmdci_discrete(point, LAP, LAP, LAP) == 0.0
    assert abs(population_mmdci_discrete(FiniteJointLaw.weak_ci(False), LAP, LAP, LAP)) <= 1e-12
    alt = population_mmdci_discrete(FiniteJointLaw.weak_ci(True), LAP, LAP, LAP)
    # P - Q = -(1/24) s(x) s(y) s(z) with s(v) = 1 - 2v, so the squared MMD factorizes
    # into (1/24)^2 * prod over the three coordinates of sum_ab s(a) s(b) K(a, b) = 2 - 2/e
    assert alt == pytest.approx((1 - math.exp(-1)) ** 3 / 72, rel=1e-12)


def test_population_consistency_error_is_raised(monkeypatch):
    import drcit.statistic as s

    monkeypatch.setattr(s, "population_mmdci_forms", lambda *a: (0.0, 1.0, 0.0))
    with pytest.raises(ConsistencyError):
        s.population_mmdci_discrete(FiniteJointLaw.weak_ci(True), LAP, LAP, LAP)


def test_law_validation():
    with pytest.raises(UsageError):
        FiniteJointLaw([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.6, 0.6])
    law = FiniteJointLaw.weak_ci(False)
    with pytest.raises(UsageError):
        oracle_t_star(TripleSample([0.0, 2.0], [0.0, 1.0], [0.0, 1.0]), law, LAP, LAP, LAP)


def test_oracle_zero_when_x_determined_by_z():
    # X = Z exactly, Y independent coin
    table = np.zeros((2, 2, 2))
    table[0, 0, :] = 0.25
    table[1, 1, :] = 0.25
    law = FiniteJointLaw.from_table(table)
    sample = law.sample(30, np.random.default_rng(0))
    assert oracle_t_star(sample, law, LAP, LAP, LAP) == 0.0


def test_oracle_t0_equals_t_when_both_determined_by_z():
    law = FiniteJointLaw([0.0, 1.0, 2.0], [5.0, 3.0, 1.0], [0.0, 1.0, 2.0], [0.2, 0.5, 0.3])
    sample = law.sample(25, np.random.default_rng(0))
    t = oracle_t_star(sample, law, LAP, LAP, LAP)
    t0 = oracle_t0_star(sample, law, LAP, LAP, LAP)
    assert t == pytest.approx(t0, abs=1e-15)


def test_oracle_two_row_hand_case():
    # X, Y, Z independent fair coins; rows (x, y, z) = (0, 0, 0) and (1, 1, 0)
    law = FiniteJointLaw.weak_ci(False)
    sample = TripleSample([0.0, 1.0], [0.0, 1.0], [0.0, 0.0])
    e = math.exp(-1)
    g = (1 + e) / 2  # E K(X, x) for a fair coin
    d = (1 + e) / 2  # E K(X, X')
    u = e - g - g + d
    assert oracle_t_star(sample, law, LAP, LAP, LAP) == pytest.approx(u * u * 1.0, rel=1e-14)
    t0 = e * e - g * g - g * g + d * d
    assert oracle_t0_star(sample, law, LAP, LAP, LAP) == pytest.approx(t0, rel=1e-14)


@pytest.mark.slow
def test_oracle_means_near_zero_under_null():
    law = FiniteJointLaw.weak_ci(False)
    rng = np.random.default_rng(0)
    ts, t0s = [], []
    for _ in range(2000):
        sample = law.sample(50, rng)
        ts.append(oracle_t_star(sample, law, LAP, LAP, LAP))
        t0s.append(oracle_t0_star(sample, law, LAP, LAP, LAP))
    for v in (np.array(ts), np.array(t0s)):
        assert abs(v.mean()) < 3 * v.std(ddof=1) / math.sqrt(len(v))
