import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from surrosens.core import BoxDomain
from surrosens.efast import (
    DegenerateVariance, FastIndices, InvalidPlan, budget_plan, curve_points, fast_indices,
    fast_plan, fourier_coefficients, indices_from_values, odd_ceil, reference_plan, write_indices,
)


def _direct_coeffs(y):
    # literal sums over the symmetric s grid
    Ns = len(y)
    s = -np.pi + np.pi * (2 * np.arange(Ns) + 1) / Ns
    K = (Ns - 1) // 2
    A = np.array([np.mean(y * np.cos(k * s)) for k in range(K + 1)])
    B = np.array([np.mean(y * np.sin(k * s)) for k in range(K + 1)])
    return A, B


@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_fourier_matches_direct_sum(half, seed):
    y = np.random.default_rng(seed).normal(size=2 * half + 1)
    A, B = fourier_coefficients(y)
    A0, B0 = _direct_coeffs(y)
    assert np.allclose(A, A0, atol=1e-12) and np.allclose(B, B0, atol=1e-12)


def test_default_plan_numbers():
    plan = fast_plan(10, M=4, Ns=65, seed=0)
    assert plan.omega_hi == 8 and plan.comp_max == 1
    assert np.all(plan.comp_freqs == 1)
    assert plan.total_evaluations == 650


def test_plan_rejects_bad_sizes():
    with pytest.raises(InvalidPlan):
        fast_plan(3, Ns=64)
    with pytest.raises(InvalidPlan):
        fast_plan(3, M=4, Ns=9)


def test_plan_frequencies_separated():
    for Ns in (65, 129, 257, 1001, 10001):
        for n in (1, 2, 3, 10, 20):
            p = fast_plan(n, Ns=Ns, seed=1)
            if n > 1:
                assert p.omega_hi > p.M * p.comp_freqs.max()
                assert p.comp_freqs.min() >= 1
            assert np.all(np.diag(p.freqs) == p.omega_hi)


def test_reference_and_budget_plans():
    assert reference_plan(10).Ns == 10001 and odd_ceil(10000) == 10001
    assert budget_plan(10, 650).Ns == 65
    assert budget_plan(10, 100).Ns == 65
    assert budget_plan(5, 1000).Ns == 199


def test_curve_stays_in_domain():
    dom = BoxDomain(np.array([-2.0, 0.0, 10.0]), np.array([3.0, 1.0, 11.0]))
    X = curve_points(fast_plan(3, Ns=129, seed=2), dom)
    assert X.shape == (3 * 129, 3) and np.all(dom.contains(X))


def test_additive_two_factor():
    dom = BoxDomain.cube(2)
    ind = fast_indices(lambda X: X[:, 0] + X[:, 1], dom, fast_plan(2, Ns=257, seed=0))
    assert np.allclose(ind.S, 0.5, atol=0.03) and np.allclose(ind.ST, 0.5, atol=0.03)
    assert np.allclose(ind.S, ind.ST, atol=0.03)


def test_additive_weighted_sum_of_first_order():
    dom = BoxDomain.cube(4)
    w = np.array([4.0, 2.0, 1.0, 0.5])
    for seed in range(10):
        ind = fast_indices(lambda X: X @ w, dom, fast_plan(4, Ns=257, seed=seed))
        assert ind.S.sum() <= 1.05
        # uniform inputs: V_i proportional to w_i^2
        assert np.allclose(ind.S, w ** 2 / (w ** 2).sum(), atol=0.03)


def test_constant_target_is_degenerate():
    with pytest.raises(DegenerateVariance):
        fast_indices(lambda X: np.full(len(X), 3.0), BoxDomain.cube(3), fast_plan(3, seed=0))


@given(st.integers(1, 6), st.sampled_from([65, 129, 257]), st.integers(0, 2**32 - 1))
def test_bounds_hold_for_arbitrary_values(n, Ns, seed):
    rng = np.random.default_rng(seed)
    plan = fast_plan(n, Ns=Ns, seed=seed)
    y = rng.standard_cauchy(n * Ns) * rng.random()
    ind = indices_from_values(plan, y + 1.0)
    assert np.all(ind.S >= 0) and np.all(ind.S <= ind.ST) and np.all(ind.ST <= 1)


def test_permutation_equivariance():
    dom = BoxDomain.cube(3)
    w = np.array([3.0, 1.0, 2.0])
    perm = np.array([2, 0, 1])
    a = fast_indices(lambda X: np.sin(X @ w), dom, fast_plan(3, Ns=513, seed=0))
    # factor k of the relabelled problem is factor perm[k] of the original
    b = fast_indices(lambda X: np.sin(X @ w[perm]), dom, fast_plan(3, Ns=513, seed=0))
    assert np.allclose(b.ST, a.ST[perm], atol=0.03)
    assert np.allclose(b.S, a.S[perm], atol=0.03)


def test_seed_determinism():
    dom = BoxDomain.cube(3)
    f = lambda X: np.exp(X).prod(axis=1)  # noqa: E731
    a = fast_indices(f, dom, fast_plan(3, Ns=129, seed=7))
    b = fast_indices(f, dom, fast_plan(3, Ns=129, seed=7))
    assert np.array_equal(a.S, b.S) and np.array_equal(a.ST, b.ST)


def test_export(tmp_path):
    ind = FastIndices(np.array([0.1, 0.2]), np.array([0.3, 0.4]), 2.5)
    write_indices(ind, tmp_path / "i.csv", tmp_path / "i.json", {"seed": 1})
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "i,S,ST" and lines[2].startswith("2,0.2")
    assert FastIndices.from_dict(
        __import__("json").loads((tmp_path / "i.json").read_text())["indices"]).V == 2.5
