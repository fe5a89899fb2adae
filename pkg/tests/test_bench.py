import csv
import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from surrosens.bench import (
    KeyMismatch, ZeroReference, matching_rate, rank_order, reference_efast, reference_mvmsl,
    rel_err, reports_to_json, run_comparison, stage_seed, top_keys, write_rank_tables,
)
from surrosens.core import EvaluationLog, builtin
from surrosens.mvmsl import full_count

# frozen 3-decimal ST columns for testproblem1, listed by variable
FROZEN_REF_ST = [0.405, 0.264, 0.145, 0.101, 0.045, 0.019, 0.011, 0.006, 0.003, 0.002]
FROZEN_O3AED_ST = [0.403, 0.263, 0.146, 0.103, 0.046, 0.019, 0.012, 0.006, 0.004, 0.002]

vec = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12)


@given(vec)
def test_rel_err_identity(v):
    v = np.array(v)
    if np.linalg.norm(v) > 0:
        assert rel_err(v, v) == 0.0
        assert rel_err(np.zeros_like(v), v) == pytest.approx(1.0)


@given(vec, st.floats(1e-3, 1e3), st.integers(0, 999))
def test_rel_err_scale_free(v, scale, seed):
    r = np.array(v)
    if np.linalg.norm(r) == 0:
        return
    c = r + np.random.default_rng(seed).normal(size=len(r))
    assert rel_err(scale * c, scale * r) == pytest.approx(rel_err(c, r), rel=1e-9)


def test_rel_err_errors():
    with pytest.raises(ZeroReference):
        rel_err([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        rel_err([1.0], [1.0, 2.0])


def test_rounded_columns_rel_err_bracket():
    r = np.array(FROZEN_REF_ST)
    d = np.array(FROZEN_O3AED_ST) - r
    # entries carry 3 decimals, so each difference is known to +-0.001
    low = np.linalg.norm(np.maximum(np.abs(d) - 0.001, 0)) / np.linalg.norm(r + 0.0005)
    high = rel_err(FROZEN_O3AED_ST, FROZEN_REF_ST)
    assert low <= 0.003 <= high
    assert high == pytest.approx(0.007, abs=0.001)


def _effects(values):
    keys = [((i, j), (a, b)) for i, j in itertools.combinations(range(4), 2)
            for a, b in itertools.product((1, -1), repeat=2)]
    return dict(zip(keys, values))


def test_matching_rate_identities():
    vals = np.linspace(0, 1, 24)
    a = _effects(vals)
    assert matching_rate(a, a, s=10) == 1.0
    assert matching_rate(_effects(vals[::-1]), a, s=12) == 0.0
    with pytest.raises(KeyMismatch):
        matching_rate(a, {k: v for k, v in list(a.items())[:-1]}, s=3)
    with pytest.raises(ValueError):
        matching_rate(a, a, s=25)


def test_matching_rate_tie_break():
    m = _effects(np.zeros(24))
    assert top_keys(m, 2) == sorted(m)[:2]


@given(st.integers(0, 2**32 - 1), st.integers(1, 24))
def test_matching_rate_relabel_invariant(seed, s):
    rng = np.random.default_rng(seed)
    a, b = _effects(rng.random(24)), _effects(rng.random(24))
    perm = rng.permutation(4)

    def relabel(m):
        out = {}
        for (idx, sg), v in m.items():
            pairs = sorted(zip((int(perm[i]) for i in idx), sg))
            out[(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))] = v
        return out

    g = matching_rate(a, b, s=s)
    assert 0.0 <= g <= 1.0
    assert matching_rate(relabel(a), relabel(b), s=s) == g


def test_rank_order_ties():
    assert rank_order([0.2, 0.5, 0.2, 0.1]).tolist() == [1, 0, 2, 3]


def test_stage_seed_distinct():
    seeds = {stage_seed(s, k) for s in range(5) for k in ("opt", "ext", "lhd", "plan")}
    assert len(seeds) == 20


def test_reference_efast_additive_and_cache(tmp_path):
    bb = builtin("additive10")
    log = EvaluationLog(bb.domain)
    ref = reference_efast(bb, per_factor=2000, log=log, cache_dir=tmp_path)
    assert len(log) == 10 * 2001
    assert np.max(np.abs(ref.S - ref.ST)) <= 0.01
    again = EvaluationLog(bb.domain)
    hit = reference_efast(bb, per_factor=2000, log=again, cache_dir=tmp_path)
    assert len(again) == 0 and np.array_equal(hit.ST, ref.ST)


def test_reference_mvmsl_counts():
    bb = builtin("additive10")
    log = EvaluationLog(bb.domain)
    res = reference_mvmsl(bb, np.full(10, 0.5), 0.2, log)
    assert len(res.effects) == full_count(10) == 1160
    # nominal point plus every perturbation
    assert log.count("reference") == 1161


def test_zero_seeds():
    assert run_comparison("sphere2", "efast", 20, seeds=[]) == []


def test_efast_comparison_structure(tmp_path):
    reps = run_comparison("sphere3", "efast", 20, 10, seeds=[0, 1], cache_dir=tmp_path,
                          surrogate_per_factor=501)
    methods = [r.method for r in reps]
    assert methods == ["REF"] + ["O3AED_RBF", "LHD_RBF", "DIRECT"] * 2
    for r in reps[1:]:
        assert r.status == "ok" and r.rel_err["ST"] >= 0
    arms = [r for r in reps if r.method in ("O3AED_RBF", "LHD_RBF")]
    assert {r.budgets["total"] for r in arms} == {30}
    direct = [r for r in reps if r.method == "DIRECT"]
    assert all(r.budgets["total"] == 65 * 3 for r in direct)
    paths = write_rank_tables(reps, tmp_path, ("ST",))
    rows = list(csv.reader(open(paths[0])))
    assert rows[0][:3] == ["rank", "REF_i", "REF_value"] and len(rows) == 1 + 3 + 1


def test_mvmsl_comparison_structure():
    reps = run_comparison("sphere4", "mvmsl", 20, seeds=[0], surrogates=("rbf", "kriging"),
                          lhd_surrogates=("rbf",), oo_counts=(8, 10, 10), top=5,
                          kriging_opts={"max_evals": 30, "starts": 4})
    assert [r.method for r in reps] == ["REF", "O3AED_RBF", "O3AED_Kriging", "LHD_RBF"]
    totals = {r.budgets["total"] for r in reps[1:]}
    assert totals == {48}
    for r in reps[1:]:
        assert set(r.rel_err) == {"SI1", "SI2", "SI3", "E1", "E2"}
        assert all(0 <= g <= 1 for g in r.gamma.values())


def test_report_json_deterministic(tmp_path):
    a = run_comparison("sphere2", "efast", 12, seeds=[3], cache_dir=tmp_path, surrogate_per_factor=301)
    b = run_comparison("sphere2", "efast", 12, seeds=[3], cache_dir=tmp_path, surrogate_per_factor=301)
    assert reports_to_json(a, {"x": 1}) == reports_to_json(b, {"x": 1})
    json.loads(reports_to_json(a, {}))
