"""Acceptance criteria at their stated tolerances, one summary line each."""

import json
import time

import numpy as np
import pytest

from surrosens.bench import matching_rate, reference_efast, rel_err, reports_to_json, run_comparison
from surrosens.core import BoxDomain, EvaluationLog, builtin
from surrosens.efast import DegenerateVariance, fast_indices, fast_plan
from surrosens.mvmsl import full_count, mvmsl, mvmsl_on_surrogate
from surrosens.surrogate import FunctionSurrogate, fit_kriging, fit_rbf

pytestmark = pytest.mark.slow

SEEDS = range(10)
TP1_ST = np.array([0.405, 0.264, 0.145, 0.101, 0.045, 0.019, 0.011, 0.006, 0.003, 0.002])
MV_FAMILIES = ("SI1", "SI2", "SI3", "E1", "E2")


def _by_seed(reports, method):
    return {r.seed: r for r in reports if r.method == method}


@pytest.fixture(scope="session")
def ref_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("refcache")


@pytest.fixture(scope="session")
def efast_reports(ref_cache):
    return run_comparison("testproblem1", "efast", 100, 0, seeds=SEEDS, cache_dir=ref_cache)


@pytest.fixture(scope="session")
def mvmsl_reports():
    return run_comparison("interaction20", "mvmsl", 600, seeds=SEEDS, surrogates=("rbf", "kriging"),
                          lhd_surrogates=("rbf",), rho=0.2,
                          kriging_opts={"max_evals": 150, "starts": 10})


def test_c01_reference_testproblem1(acceptance, ref_cache):
    bb = builtin("testproblem1")
    log = EvaluationLog(bb.domain)
    t0 = time.perf_counter()
    ref = reference_efast(bb, seed=0, per_factor=10_000, log=log, cache_dir=ref_cache)
    elapsed = time.perf_counter() - t0
    dev = float(np.max(np.abs(ref.ST - TP1_ST)))
    top6 = np.argsort(-ref.ST, kind="stable")[:6].tolist() == list(range(6))
    ok = dev <= 0.02 and top6 and elapsed < 60 and len(log) == 10 * 10_001
    acceptance(1, ok, f"max|ST-ref|={dev:.4f} top6={'exact' if top6 else 'wrong'} "
                      f"runtime={elapsed:.1f}s evals={len(log)}")
    assert ok


def test_c02_o3aed_efast_accuracy(acceptance, efast_reports):
    errs = [r.rel_err["ST"] for r in _by_seed(efast_reports, "O3AED_RBF").values()]
    med = float(np.median(errs))
    ok = len(errs) == 10 and med <= 0.10
    acceptance(2, ok, f"median Rel_Err(ST)={med:.4f} over {len(errs)} seeds (<= 0.10)")
    assert ok


def test_c03_o3aed_beats_lhd_and_direct(acceptance, efast_reports):
    o3 = _by_seed(efast_reports, "O3AED_RBF")
    lhd = _by_seed(efast_reports, "LHD_RBF")
    direct = _by_seed(efast_reports, "DIRECT")
    assert all(r.budgets["total"] == 650 for r in direct.values())
    w_lhd = sum(o3[s].rel_err["ST"] < lhd[s].rel_err["ST"] for s in SEEDS)
    w_dir = sum(o3[s].rel_err["ST"] < direct[s].rel_err["ST"] for s in SEEDS)
    med = {k: float(np.median([r.rel_err["ST"] for r in v.values()]))
           for k, v in (("O3AED", o3), ("LHD", lhd), ("DIRECT", direct))}
    ok = w_lhd >= 8 and w_dir >= 8
    acceptance(3, ok, f"wins vs LHD {w_lhd}/10, vs DIRECT {w_dir}/10 (need 8); medians "
                      + " ".join(f"{k}={v:.3f}" for k, v in med.items()))
    assert ok


def test_c04_mvmsl_identity_and_counts(acceptance):
    worst = 0.0
    for n in (2, 5, 10):
        dom = BoxDomain.cube(n, -1.0, 2.0)
        w = np.linspace(0.5, 2.0, n)

        def f(X, w=w):
            X = np.atleast_2d(X)
            return 3.0 + np.sin(X @ w) + (X[:, 0] * X[:, -1]) ** 2

        xbar = np.linspace(-0.2, 1.1, n)
        for rho in (0.1, 0.2):
            direct = mvmsl(f, dom, xbar, rho)
            sur = mvmsl_on_surrogate(FunctionSurrogate(f, dom), dom, xbar, rho)
            for m, lev in direct.effects.levels.items():
                worst = max(worst, float(np.max(np.abs(lev.effects - sur.effects.levels[m].effects))))
    counts = all(
        [2 * n, 2 * n * (n - 1), 4 * n * (n - 1) * (n - 2) // 3][m - 1]
        == len(mvmsl(lambda X: 1.0 + np.sum(np.atleast_2d(X), axis=1), BoxDomain.cube(n), np.full(n, 0.5),
                     0.2).effects.levels[m].effects)
        for n in (3, 4, 7) for m in (1, 2, 3))
    n36 = full_count(36)
    ok = worst <= 1e-12 and counts and n36 == 59_712
    acceptance(4, ok, f"identity max diff={worst:.2e} counts={'ok' if counts else 'bad'} n=36 -> {n36}")
    assert ok


def test_c05_interaction20_o3aed_beats_lhd(acceptance, mvmsl_reports):
    o3 = _by_seed(mvmsl_reports, "O3AED_RBF")
    lhd = _by_seed(mvmsl_reports, "LHD_RBF")
    wins = {f: sum(o3[s].rel_err[f] < lhd[s].rel_err[f] for s in SEEDS) for f in MV_FAMILIES}
    budgets = {(o3[s].budgets["total"], lhd[s].budgets["total"]) for s in SEEDS}
    ok = all(v >= 8 for v in wins.values()) and all(a == b for a, b in budgets)
    acceptance(5, ok, "wins " + " ".join(f"{f}={v}/10" for f, v in wins.items()) + " (need 8 each)")
    assert ok


def test_c06_rbf_vs_kriging_si1(acceptance, mvmsl_reports):
    rbf = _by_seed(mvmsl_reports, "O3AED_RBF")
    kri = _by_seed(mvmsl_reports, "O3AED_Kriging")
    wins = sum(rbf[s].rel_err["SI1"] <= kri[s].rel_err["SI1"] for s in SEEDS)
    ok = wins >= 7
    acceptance(6, ok, f"RBF <= Kriging on Rel_Err(SI1) in {wins}/10 seeds (need 7)")
    assert ok


def test_c07_surrogate_accuracy(acceptance):
    rng = np.random.default_rng(7)
    affine = interp_rbf = interp_kri = sigma_const = 0.0
    for trial in range(5):
        n = int(rng.integers(2, 6))
        X = rng.random((10 * n, n))
        a, b = rng.normal(size=n), rng.normal()
        model = fit_rbf(X, X @ a + b)
        Z = rng.random((200, n))
        affine = max(affine, float(np.max(np.abs(model.predict(Z) - (Z @ a + b)))))
        y = np.sin(3 * X).sum(axis=1) + X[:, 0] * X[:, -1]
        m_rbf = fit_rbf(X, y)
        interp_rbf = max(interp_rbf, float(np.max(np.abs(m_rbf.predict(X) - y)))
                         / max(1.0, float(np.max(np.abs(y)))))
        m_kri = fit_kriging(X, y, seed=trial)
        interp_kri = max(interp_kri, float(np.max(np.abs(m_kri.predict(X) - y))) / float(np.ptp(y)))
        const = fit_kriging(X, np.full(len(X), 2.5), seed=trial)
        sigma_const = max(sigma_const, const.sigma2)
    ok = affine <= 1e-10 and interp_rbf <= 1e-8 and interp_kri <= 1e-6 and sigma_const <= 1e-12
    acceptance(7, ok, f"affine={affine:.1e} rbf interp={interp_rbf:.1e} "
                      f"kriging interp={interp_kri:.1e} const sigma2={sigma_const:.1e}")
    assert ok


def test_c08_index_bounds(acceptance):
    rng = np.random.default_rng(8)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        plan = fast_plan(n, Ns=int(rng.choice([65, 129, 257])), seed=int(rng.integers(2**31)))
        c = rng.normal(size=(3, n))
        p = rng.integers(1, 4)

        def f(X, c=c, p=p):
            return np.sin(X @ c[0]) + (X @ c[1]) ** p + np.prod(np.cos(c[2] * X), axis=1)

        ind = fast_indices(f, BoxDomain.cube(n), plan)
        violations += int(np.sum(~((0 <= ind.S) & (ind.S <= ind.ST) & (ind.ST <= 1))))
    raised = True
    for n in (1, 3, 8):
        try:
            fast_indices(lambda X: np.full(len(X), 4.0), BoxDomain.cube(n), fast_plan(n, seed=0))
            raised = False
        except DegenerateVariance:
            pass
    ok = violations == 0 and raised
    acceptance(8, ok, f"bound violations={violations} on 1000 targets, "
                      f"DegenerateVariance on constants={'yes' if raised else 'no'}")
    assert ok


def test_c09_metric_identities_and_budgets(acceptance, efast_reports, mvmsl_reports):
    v = np.array([0.4, 0.3, 0.2, 0.1])
    keys = [((i,), (s,)) for i in range(5) for s in (1, -1)]
    ref = dict(zip(keys, np.arange(10.0)))
    rev = dict(zip(keys, np.arange(10.0)[::-1]))
    metrics = rel_err(v, v) == 0.0 and matching_rate(ref, ref, s=5) == 1.0 \
        and matching_rate(rev, ref, s=5) == 0.0
    fair = True
    for reports, a, b in ((efast_reports, "O3AED_RBF", "LHD_RBF"),
                          (mvmsl_reports, "O3AED_RBF", "LHD_RBF")):
        x, y = _by_seed(reports, a), _by_seed(reports, b)
        fair &= all(x[s].budgets["total"] == y[s].budgets["total"] for s in SEEDS)
    ok = metrics and fair
    acceptance(9, ok, f"metric identities={'ok' if metrics else 'bad'} "
                      f"fair budgets={'equal' if fair else 'unequal'}")
    assert ok


def test_c10_report_determinism(acceptance, ref_cache):
    runs = [reports_to_json(run_comparison("testproblem1", "efast", 100, seeds=[4], cache_dir=ref_cache),
                            {"seed": 4}).encode() for _ in range(2)]
    json.loads(runs[0])
    ok = runs[0] == runs[1]
    acceptance(10, ok, f"two runs -> {'byte-identical' if ok else 'different'} report JSON "
                       f"({len(runs[0])} bytes)")
    assert ok
