import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surrosens.core import EvaluationLog, SurrosensError, builtin
from surrosens.optimizer import OptimizerConfig, optimize, random_search


def _run(name, budget, seed, **kw):
    bb = builtin(name)
    log = EvaluationLog(bb.domain)
    return optimize(bb, OptimizerConfig(budget, bb.dim, seed=seed, **kw), log), log


def test_config_defaults_and_validation():
    cfg = OptimizerConfig(50, 3)
    assert cfg.init_size == 8 and cfg.candidates_per_iter == 300
    assert OptimizerConfig(200, 80).candidates_per_iter == 5000
    with pytest.raises(ValueError):
        OptimizerConfig(8, 3)
    with pytest.raises(ValueError):
        OptimizerConfig(50, 3, init_size=4)


def test_single_guided_step():
    res, log = _run("sphere2", 7, 0)
    assert len(log) == 7 == len(res.trace)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(9, 40))
def test_trace_contract(seed, budget):
    res, log = _run("sphere3", budget, seed)
    y = res.trace.values()
    assert len(y) == budget == log.count("opt")
    assert res.f_star == y.min()
    assert np.all(res.trace.domain.contains(res.trace.points()))
    assert np.all(np.diff(np.minimum.accumulate(y)) <= 0)
    assert np.array_equal(log.values(), y)


def test_determinism():
    a, _ = _run("testproblem1", 40, 11)
    b, _ = _run("testproblem1", 40, 11)
    assert np.array_equal(a.trace.points(), b.trace.points())


def test_beats_random_search_on_sphere():
    opt, rnd = [], []
    for seed in range(20):
        opt.append(_run("sphere2", 60, seed)[0].f_star)
        bb = builtin("sphere2")
        rnd.append(random_search(bb, 60, seed, EvaluationLog(bb.domain)).f_star)
    assert np.median(opt) <= 1e-3
    assert np.median(rnd) >= 10 * np.median(opt)


def test_respects_log_capacity():
    bb = builtin("sphere2")
    with pytest.raises(SurrosensError):
        optimize(bb, OptimizerConfig(20, 2, seed=0), EvaluationLog(bb.domain, budget=10))


def test_random_search_contract():
    bb = builtin("sphere2")
    r = random_search(bb, 1, 3, EvaluationLog(bb.domain))
    assert len(r.trace) == 1 and np.array_equal(r.x_star, r.trace.points()[0])
    a = random_search(bb, 5, 3, EvaluationLog(bb.domain)).trace.points()
    assert np.array_equal(a, random_search(bb, 5, 3, EvaluationLog(bb.domain)).trace.points())
