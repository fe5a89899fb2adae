"""Budgeted stochastic-RBF global optimizer whose trace seeds the surrogate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import BlackBox, EvaluationLog, SurrosensError, evaluate_batch
from .design import maximin_lhs
from .surrogate import default_gamma, fit_rbf

logger = logging.getLogger(__name__)

MIN_SEPARATION = 1e-4
UNIFORM_FRACTION = 0.1


@dataclass
class OptimizerConfig:
    budget: int
    n: int
    init_size: int | None = None
    candidates_per_iter: int | None = None
    weight_cycle: tuple[float, ...] = (0.3, 0.5, 0.8, 0.95)
    sigma_schedule: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    seed: int | None = None
    init_iters: int = 2000
    min_sigma_scale: float = 1.0 / 64

    def __post_init__(self):
        if self.init_size is None:
            self.init_size = 2 * (self.n + 1)
        if self.candidates_per_iter is None:
            self.candidates_per_iter = min(100 * self.n, 5000)
        if self.init_size < self.n + 2:
            raise ValueError(f"init_size must be >= n + 2 = {self.n + 2}")
        if self.budget <= self.init_size:
            raise ValueError(f"budget ({self.budget}) must exceed init_size ({self.init_size})")


@dataclass
class OptimizationResult:
    x_star: np.ndarray
    f_star: float
    trace: EvaluationLog
    history: list = field(default_factory=list, repr=False)


def _trace_result(bb: BlackBox, U: np.ndarray, y: np.ndarray) -> OptimizationResult:
    trace = EvaluationLog(bb.domain)
    X = bb.domain.lower + U * bb.domain.width
    for x, v in zip(X, y):
        trace.append(x, v, "opt")
    k = int(np.argmin(y))
    return OptimizationResult(X[k].copy(), float(y[k]), trace)


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def optimize(bb: BlackBox, cfg: OptimizerConfig, log: EvaluationLog) -> OptimizationResult:
    """Minimize ``bb`` with exactly ``cfg.budget`` evaluations.

    Starts from a maximin Latin hypercube, then repeatedly fits a Gaussian RBF
    and evaluates the best-scoring candidate among Gaussian perturbations of
    the incumbent and uniform samples. Candidate score trades predicted value
    against distance to evaluated points through a cycling weight.
    """
    if cfg.n != bb.dim:
        raise ValueError("config dimension does not match the black box")
    if log.remaining < cfg.budget:
        raise SurrosensError(f"log has room for {log.remaining} evaluations, need {cfg.budget}")
    n = bb.dim
    rng = np.random.default_rng(cfg.seed)
    dom = bb.domain

    def f(u):
        return evaluate_batch(bb, dom.lower + np.atleast_2d(u) * dom.width, log, "opt")

    U = maximin_lhs(cfg.init_size, n, rng, iters=cfg.init_iters).points
    y = f(U)
    best = int(np.argmin(y))
    p_coord = min(20.0 / n, 1.0)
    n_unif = int(round(UNIFORM_FRACTION * cfg.candidates_per_iter))
    n_pert = cfg.candidates_per_iter - n_unif
    scale, fails = 1.0, 0
    fail_limit = max(5, n)
    t = 0
    while len(U) < cfg.budget:
        w = cfg.weight_cycle[t % len(cfg.weight_cycle)]
        sigma = cfg.sigma_schedule[t % len(cfg.sigma_schedule)] * scale
        mask = rng.random((n_pert, n)) < p_coord
        none = ~mask.any(axis=1)
        mask[none, rng.integers(n, size=int(none.sum()))] = True
        cand = U[best] + mask * rng.normal(0.0, sigma, size=(n_pert, n))
        cand = np.clip(np.vstack([cand, rng.random((n_unif, n))]), 0.0, 1.0)
        dmin = cdist(cand, U).min(axis=1)
        ok = dmin >= MIN_SEPARATION
        if not ok.any():
            cand, dmin, ok = rng.random((1, n)), np.ones(1), np.ones(1, dtype=bool)
        cand, dmin = cand[ok], dmin[ok]
        try:
            model = fit_rbf(U, y, gamma=default_gamma(U))
            pred = model.predict(cand)
            if not np.all(np.isfinite(pred)):
                raise SurrosensError("non-finite surrogate prediction")
        except SurrosensError as exc:
            logger.warning("iteration %d: surrogate fit failed (%s); scoring by distance only", t, exc)
            pred, w = np.zeros(len(cand)), 0.0
        score = w * _minmax(pred) + (1.0 - w) * _minmax(-dmin)
        k = np.lexsort((np.arange(len(cand)), pred, score))[0]
        u_new = cand[k]
        y_new = f(u_new)[0]
        U = np.vstack([U, u_new])
        y = np.append(y, y_new)
        if y_new < y[best]:
            best, fails = len(y) - 1, 0
        else:
            fails += 1
            if fails >= fail_limit:
                scale, fails = max(scale / 2.0, cfg.min_sigma_scale), 0
        t += 1
    return _trace_result(bb, U, y)


def random_search(bb: BlackBox, budget: int, seed, log: EvaluationLog) -> OptimizationResult:
    """Uniform random sampling baseline with the same result contract."""
    if budget < 1:
        raise ValueError("budget must be positive")
    rng = np.random.default_rng(seed)
    U = rng.random((budget, bb.dim))
    y = evaluate_batch(bb, bb.domain.lower + U * bb.domain.width, log, "opt")
    return _trace_result(bb, U, y)
