"""Gaussian RBF interpolation and ordinary Kriging on unit-cube data."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist, squareform

from .core import DEFAULT_DEDUP_TOL, BoxDomain, SurrosensError
from .design import latin_hypercube

logger = logging.getLogger(__name__)


class SingularSystem(SurrosensError):
    pass


class SingularCorrelation(SurrosensError):
    pass


class TooFewPoints(SurrosensError):
    pass


GAMMA_GRID = (1 / 16, 1 / 4, 1.0, 4.0, 16.0)
THETA_BOUNDS = (1e-3, 1e3)
MAX_NUGGET = 1e-4
MIN_NUGGET = 1e-14
# grid gammas must reproduce the data to this relative accuracy
INTERP_TOL = 1e-9
RBF_RCOND_MIN = 1e-12
MAX_GAMMA_FACTOR = 1e4
KRIGING_INTERP_TOL = 1e-7


def dedup_points(X, y, tol: float = DEFAULT_DEDUP_TOL):
    """Drop points within ``tol`` (max-norm) of an earlier point."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    keep = np.ones(len(X), dtype=bool)
    if len(X) > 1:
        for i, j in sorted(cKDTree(X).query_pairs(tol, p=np.inf)):
            if keep[i]:
                keep[j] = False
    return X[keep], y[keep]


# ---------------------------------------------------------------------------
# RBF


@dataclass
class RbfModel:
    centers: np.ndarray
    lam: np.ndarray
    poly: np.ndarray
    gamma: float
    ridge: float = 0.0
    kind: str = field(default="rbf", init=False)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        phi = np.exp(-self.gamma * cdist(x, self.centers, "sqeuclidean"))
        return phi @ self.lam + self.poly[0] + x @ self.poly[1:]

    def to_dict(self) -> dict:
        return {"kind": "rbf", "centers": self.centers.tolist(), "lambda": self.lam.tolist(),
                "poly": self.poly.tolist(), "gamma": self.gamma, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "RbfModel":
        return cls(np.array(d["centers"], dtype=float), np.array(d["lambda"], dtype=float),
                   np.array(d["poly"], dtype=float), float(d["gamma"]), float(d["ridge"]))


def default_gamma(X) -> float:
    """1 / (2 d_med^2) with d_med the median pairwise center distance."""
    d = pdist(np.atleast_2d(X))
    d_med = float(np.median(d)) if d.size else 1.0
    return 1.0 / (2.0 * max(d_med, 1e-12) ** 2)


def _rbf_matrix(X: np.ndarray, gamma: float, ridge: float) -> np.ndarray:
    m, n = X.shape
    A = np.zeros((m + n + 1, m + n + 1))
    A[:m, :m] = np.exp(-gamma * squareform(pdist(X, "sqeuclidean")))
    A[:m, :m][np.diag_indices(m)] += ridge
    A[:m, m] = A[m, :m] = 1.0
    A[:m, m + 1:] = X
    A[m + 1:, :m] = X.T
    return A


def _check_poly_rank(X: np.ndarray) -> None:
    P = np.column_stack([np.ones(len(X)), X])
    if np.linalg.matrix_rank(P) < P.shape[1]:
        raise SingularSystem("linear tail is rank deficient on these centers")


def _lu_solve_checked(A: np.ndarray, rhs: np.ndarray):
    with np.errstate(all="ignore"):
        try:
            lu = sla.lu_factor(A, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SingularSystem(str(exc)) from None
        if np.any(np.abs(np.diag(lu[0])) < 1e-300):
            raise SingularSystem("exactly singular saddle matrix")
        sol = sla.lu_solve(lu, rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("non-finite solution")
    resid = A @ sol - rhs
    scale = np.abs(A).max() * np.abs(sol).max() + np.abs(rhs).max()
    if np.abs(resid).max() > 1e-6 * max(scale, 1e-300):
        raise SingularSystem("saddle solve failed to converge")
    return lu, sol


def _rbf_solve(X, y, gamma, ridge):
    m, n = X.shape
    A = _rbf_matrix(X, gamma, ridge)
    rhs = np.concatenate([y, np.zeros(n + 1)])
    _, sol = _lu_solve_checked(A, rhs)
    return sol[:m], sol[m:]


def _rbf_solve_escalating(X, y, gamma, ridge):
    if ridge is not None:
        lam, poly = _rbf_solve(X, y, gamma, ridge)
        return lam, poly, ridge
    try:
        lam, poly = _rbf_solve(X, y, gamma, 0.0)
        return lam, poly, 0.0
    except SingularSystem:
        r = 1e-10  # max(diag Phi) is 1 for the Gaussian kernel
        logger.warning("RBF system singular at gamma=%.4g; retrying with ridge %.1e", gamma, r)
        lam, poly = _rbf_solve(X, y, gamma, r)
        return lam, poly, r


def _prep(X, y, min_points: int, what: str):
    X, y = dedup_points(X, y)
    if len(X) < min_points:
        raise TooFewPoints(f"{what} needs at least {min_points} distinct points, got {len(X)}")
    return X, y


def fit_rbf(X, y, gamma: float | None = None, ridge: float | None = None) -> RbfModel:
    """Gaussian RBF interpolant with a linear polynomial tail.

    When ``gamma`` is omitted it starts from :func:`default_gamma` and is
    refined over ``GAMMA_GRID`` by leave-one-out error, skipping grid values
    whose system is too ill-conditioned (if all are, gamma grows by 4x
    steps until one is not). ``ridge=None`` means
    exact interpolation with automatic escalation on singular systems.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    X, y = _prep(X, y, n + 2, "RBF fit")
    _check_poly_rank(X)
    if gamma is None:
        g0 = default_gamma(X)
        gamma = g0
        if len(X) >= n + 3:
            best = math.inf
            tol = INTERP_TOL * max(1.0, float(np.abs(y).max()))
            for f in GAMMA_GRID:
                try:
                    err = _rbf_loo(X, y, g0 * f, 0.0 if ridge is None else ridge, tol)
                except SingularSystem:
                    continue
                if err < best:
                    best, gamma = err, g0 * f
            f = GAMMA_GRID[-1]
            while best == math.inf and f < MAX_GAMMA_FACTOR:
                # whole grid too flat for these centers: sharpen until the data are reproduced
                f *= 4.0
                try:
                    best = _rbf_loo(X, y, g0 * f, 0.0 if ridge is None else ridge, tol)
                    gamma = g0 * f
                except SingularSystem:
                    continue
    lam, poly, used = _rbf_solve_escalating(X, y, gamma, ridge)
    return RbfModel(X, lam, poly, float(gamma), used)


def _rippa(A: np.ndarray, rhs: np.ndarray, m: int, rcond_min: float | None = None):
    """Closed-form leave-one-out residuals of an interpolation saddle system.

    Also returns the full solution vector. With ``rcond_min`` the system is
    rejected (SingularSystem) when its reciprocal 1-norm condition is lower.
    """
    lu, sol = _lu_solve_checked(A, rhs)
    if rcond_min is not None:
        rcond = sla.lapack.dgecon(lu[0], np.abs(A).sum(axis=0).max())[0]
        if not rcond >= rcond_min:
            raise SingularSystem(f"reciprocal condition {rcond:.1e} below {rcond_min:.0e}")
    inv_diag = np.diag(sla.lu_solve(lu, np.eye(len(A))[:, :m]))[:m]
    if np.any(np.abs(inv_diag) < 1e-300):
        raise SingularSystem("degenerate leave-one-out diagonal")
    return sol[:m] / inv_diag, sol


def _rbf_loo(X, y, gamma, ridge, interp_tol: float | None = None) -> float:
    """RMS leave-one-out error; with ``interp_tol`` also rejects (SingularSystem)
    ill-conditioned systems and solutions whose training residual exceeds it.

    Conditioning is the primary test: it is stable under rounding-level changes
    of the centers, whereas the residual of a near-singular solve is noise.
    """
    m, n = X.shape
    A = _rbf_matrix(X, gamma, ridge)
    rcond_min = None if interp_tol is None else RBF_RCOND_MIN
    e, sol = _rippa(A, np.concatenate([y, np.zeros(n + 1)]), m, rcond_min)
    if interp_tol is not None and np.abs(A[:m] @ sol - y).max() > interp_tol:
        raise SingularSystem(f"gamma={gamma:.4g} too ill-conditioned to interpolate")
    return float(np.sqrt(np.mean(e ** 2)))


# ---------------------------------------------------------------------------
# Kriging


@dataclass
class KrigingModel:
    centers: np.ndarray
    theta: np.ndarray
    mu: float
    sigma2: float
    nugget: float
    alpha: np.ndarray
    loglik: float = math.nan
    solve_state: object = field(default=None, repr=False)
    kind: str = field(default="kriging", init=False)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.sqrt(self.theta)
        r = np.exp(-cdist(x * s, self.centers * s, "sqeuclidean"))
        return self.mu + r @ self.alpha

    def to_dict(self) -> dict:
        return {"kind": "kriging", "centers": self.centers.tolist(), "theta": self.theta.tolist(),
                "mu": self.mu, "sigma2": self.sigma2, "nugget": self.nugget,
                "alpha": self.alpha.tolist(), "loglik": self.loglik}

    @classmethod
    def from_dict(cls, d: dict) -> "KrigingModel":
        return cls(np.array(d["centers"], dtype=float), np.array(d["theta"], dtype=float),
                   float(d["mu"]), float(d["sigma2"]), float(d["nugget"]),
                   np.array(d["alpha"], dtype=float), float(d.get("loglik", math.nan)))


def correlation_matrix(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.exp(-squareform(pdist(X * np.sqrt(theta), "sqeuclidean")))


def _kriging_core(X, y, theta, nugget):
    """GLS estimates and concentrated log-likelihood for fixed theta and nugget."""
    m = len(X)
    R = correlation_matrix(X, theta)
    R[np.diag_indices(m)] += nugget
    try:
        c = sla.cho_factor(R, lower=True)
    except np.linalg.LinAlgError:
        raise SingularCorrelation("correlation matrix not positive definite") from None
    ones = np.ones(m)
    ri_1 = sla.cho_solve(c, ones)
    ri_y = sla.cho_solve(c, y)
    mu = float(ones @ ri_y / (ones @ ri_1))
    resid = y - mu
    alpha = sla.cho_solve(c, resid)
    sigma2 = max(float(resid @ alpha) / m, 0.0)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    loglik = -0.5 * m * math.log(max(sigma2, 1e-300)) - 0.5 * logdet
    return mu, sigma2, alpha, loglik, c


def _kriging_core_escalating(X, y, theta, nugget):
    nug = nugget
    while True:
        try:
            return _kriging_core(X, y, theta, nug) + (nug,)
        except SingularCorrelation:
            if nug >= MAX_NUGGET:
                raise
            nug = min(max(nug * 10.0, 1e-12), MAX_NUGGET)


def _pattern_search(f, z0: np.ndarray, f0: float, lo: float, hi: float,
                    budget: int, step: float = 1.0, tol: float = 0.05):
    """Coordinate pattern search (maximization) with halving steps."""
    z, fz, used = z0.copy(), f0, 0
    while step >= tol and used < budget:
        improved = False
        for k in range(len(z)):
            for d in (step, -step):
                if used >= budget:
                    break
                t = z.copy()
                t[k] = min(max(t[k] + d, lo), hi)
                if t[k] == z[k]:
                    continue
                ft = f(t)
                used += 1
                if ft > fz:
                    z, fz, improved = t, ft, True
                    break
        if not improved:
            step /= 2.0
    return z, fz, used


def fit_kriging(X, y, nugget: float | None = None, starts: int = 20,
                theta=None, seed: int = 0, max_evals: int | None = None) -> KrigingModel:
    """Ordinary Kriging with Gaussian correlation.

    theta maximizes the concentrated log-likelihood: ``starts`` points from a
    Latin hypercube in log10(theta) space are scored, then refined by
    coordinate pattern search, best start first, until ``max_evals``
    likelihood evaluations are spent (default 40 * n + 100). Passing
    ``theta`` skips estimation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X, y = _prep(X, y, 2, "Kriging fit")
    m, n = X.shape
    nug = 1e-8 if nugget is None else float(nugget)
    if theta is not None:
        th = np.broadcast_to(np.asarray(theta, dtype=float), (n,)).copy()
        if nugget is not None:
            mu, s2, alpha, ll, c = _kriging_core(X, y, th, nug)
        else:
            mu, s2, alpha, ll, c, nug = _kriging_core_escalating(X, y, th, nug)
        return KrigingModel(X, th, mu, s2, nug, alpha, ll, c)

    lo, hi = np.log10(THETA_BOUNDS)
    cache: dict[bytes, float] = {}

    def loglik(z):
        key = np.round(z, 12).tobytes()
        if key not in cache:
            try:
                cache[key] = _kriging_core_escalating(X, y, 10.0 ** z, nug)[3]
            except SingularCorrelation:
                cache[key] = -math.inf
        return cache[key]

    z_starts = lo + (hi - lo) * latin_hypercube(starts, n, seed).points
    scores = np.array([loglik(z) for z in z_starts])
    budget = 40 * n + 100 if max_evals is None else max_evals
    best_z, best_f = z_starts[int(np.argmax(scores))], float(scores.max())
    for i in np.argsort(-scores, kind="stable"):
        if budget <= 0:
            break
        z, fz, used = _pattern_search(loglik, z_starts[i], float(scores[i]), lo, hi, budget)
        budget -= used
        if fz > best_f:
            best_z, best_f = z, fz
    if not np.isfinite(best_f):
        raise SingularCorrelation("no theta gave a positive definite correlation matrix")
    th = 10.0 ** best_z
    state = _kriging_core_escalating(X, y, th, nug)
    if nugget is None:
        state = _polish_nugget(X, y, th, state)
        tol = KRIGING_INTERP_TOL * float(np.ptp(y))
        while _train_residual(X, y, th, state) > tol and np.any(th < THETA_BOUNDS[1]):
            # too flat to interpolate: trade likelihood for conditioning
            th = np.minimum(th * 2.0, THETA_BOUNDS[1])
            state = _polish_nugget(X, y, th, _kriging_core_escalating(X, y, th, nug))
    mu, s2, alpha, ll, c, nug = state
    return KrigingModel(X, th, mu, s2, nug, alpha, ll, c)


def _train_residual(X, y, th, state) -> float:
    mu, alpha = state[0], state[2]
    return float(np.abs(mu + correlation_matrix(X, th) @ alpha - y).max())


def _polish_nugget(X, y, th, state):
    """Shrink the nugget while the factorization holds and the fit at the
    training points improves; theta is left unchanged."""
    best, err = state, _train_residual(X, y, th, state)
    nug = state[5] / 100.0
    while nug >= MIN_NUGGET:
        try:
            cand = _kriging_core(X, y, th, nug) + (nug,)
        except SingularCorrelation:
            break
        e = _train_residual(X, y, th, cand)
        if not e < err:
            break
        best, err = cand, e
        nug /= 100.0
    return best


def _kriging_loo(X, y, theta, nugget) -> float:
    m = len(X)
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = correlation_matrix(X, theta)
    A[:m, :m][np.diag_indices(m)] += nugget
    A[:m, m] = A[m, :m] = 1.0
    e, _ = _rippa(A, np.concatenate([y, [0.0]]), m)
    return float(np.sqrt(np.mean(e ** 2)))


def loo_error(kind: str, X, y, hyper: dict | None = None) -> float:
    """Root-mean-square leave-one-out error for fixed hyperparameters.

    ``hyper`` holds ``gamma``/``ridge`` for RBF (gamma defaults to the
    heuristic) or ``theta``/``nugget`` for Kriging (both required).
    """
    hyper = hyper or {}
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if kind == "rbf":
        X, y = _prep(X, y, n + 3, "RBF leave-one-out")
        _check_poly_rank(X)
        gamma = hyper.get("gamma") or default_gamma(X)
        return _rbf_loo(X, y, gamma, hyper.get("ridge", 0.0))
    if kind == "kriging":
        X, y = _prep(X, y, 3, "Kriging leave-one-out")
        theta = np.broadcast_to(np.asarray(hyper["theta"], dtype=float), (n,))
        return _kriging_loo(X, y, theta, hyper.get("nugget", 1e-8))
    raise ValueError(f"unknown surrogate kind {kind!r}")


def fit_surrogate(kind: str, X, y, **kw):
    if kind == "rbf":
        return fit_rbf(X, y, **kw)
    if kind == "kriging":
        return fit_kriging(X, y, **kw)
    raise ValueError(f"unknown surrogate kind {kind!r}")


class FunctionSurrogate:
    """Adapter presenting a true function through the surrogate interface."""

    kind = "identity"

    def __init__(self, func, domain: BoxDomain):
        self.func = func
        self.domain = domain

    def predict(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.asarray(self.func(self.domain.lower + u * self.domain.width), dtype=float)


def save_model(path, model, domain: BoxDomain) -> None:
    payload = {"model": model.to_dict(), "domain": domain.to_dict()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        payload = json.load(fh)
    d = payload["model"]
    model = RbfModel.from_dict(d) if d["kind"] == "rbf" else KrigingModel.from_dict(d)
    return model, BoxDomain.from_dict(payload["domain"])
