"""Multivariate multi-step local sensitivity (MVMSL).

Around a nominal point, every coordinate tuple of size 1, 2 or 3 is pushed
by +-rho*(b - a) in every sign combination. The elementary effect of a
perturbation is the absolute relative change of the output.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BoxDomain, SurrosensError
from .design import perturb, perturbation_keys

logger = logging.getLogger(__name__)

LEVELS = (1, 2, 3)
NOMINAL_GUARD = 1e-12


class DegenerateNominal(SurrosensError):
    """f at the nominal point is ~0; shift the objective by a constant."""


class IncompleteEffects(SurrosensError):
    pass


@dataclass(frozen=True)
class PerturbationTuple:
    indices: tuple[int, ...]
    signs: tuple[int, ...]
    rho: float

    def __post_init__(self):
        if not 1 <= len(self.indices) <= 3 or len(self.indices) != len(self.signs):
            raise ValueError("1 to 3 indices with matching signs required")
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("indices must be distinct and ascending")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +1 or -1")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")


@dataclass
class LevelEffects:
    indices: np.ndarray
    signs: np.ndarray
    effects: np.ndarray
    complete: bool


@dataclass
class ElementaryEffects:
    base: np.ndarray
    f_base: float
    rho: float
    n: int
    levels: dict[int, LevelEffects]
    n_clipped: int = 0

    def as_dict(self) -> dict[PerturbationTuple, float]:
        out = {}
        for lev in self.levels.values():
            for idx, sg, e in zip(lev.indices, lev.signs, lev.effects):
                out[PerturbationTuple(tuple(int(i) for i in idx), tuple(int(s) for s in sg),
                                      self.rho)] = float(e)
        return out

    def level(self, m: int) -> LevelEffects:
        if m not in self.levels:
            raise IncompleteEffects(f"level {m} effects were not computed")
        return self.levels[m]

    def __len__(self) -> int:
        return sum(len(v.effects) for v in self.levels.values())


@dataclass
class LocalIndices:
    SI1: np.ndarray
    SI2_pair: np.ndarray
    SI3_triple: dict[tuple[int, int, int], float]
    SI2: np.ndarray
    SI3: np.ndarray


@dataclass
class EigIndices:
    H: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray = field(repr=False)
    U1abs: np.ndarray = None
    U2abs: np.ndarray = None


@dataclass
class MvmslResult:
    effects: ElementaryEffects
    local: LocalIndices
    eig: EigIndices

    def vectors(self) -> dict[str, np.ndarray]:
        """Per-variable index families keyed as in the reports."""
        return {"SI1": self.local.SI1, "SI2": self.local.SI2, "SI3": self.local.SI3,
                "E1": self.eig.U1abs, "E2": self.eig.U2abs}


def _resolve_tuples(n: int, tuples) -> dict[int, tuple[np.ndarray, np.ndarray, bool]]:
    if tuples is None or tuples == "all":
        return {m: (*perturbation_keys(n, m), True) for m in LEVELS if m <= n}
    out = {}
    for m, (idx, sg) in tuples.items():
        idx = np.asarray(idx, dtype=int).reshape(-1, m)
        sg = np.asarray(sg, dtype=int).reshape(-1, m)
        full_idx, full_sg = perturbation_keys(n, m)
        complete = (idx.shape == full_idx.shape and np.array_equal(idx, full_idx)
                    and np.array_equal(sg, full_sg))
        out[m] = (idx, sg, complete)
    return out


def elementary_effects(target, domain: BoxDomain, xbar, rho: float,
                       tuples="all") -> ElementaryEffects:
    """Effects |f(xbar) - f(xbar + signs * delta)| / |f(xbar)| on the chosen tuples.

    ``target`` maps (m, n) points in original coordinates to (m,) values.
    ``tuples`` is ``"all"`` or a mapping level -> (indices, signs) arrays.
    Perturbed points outside the domain are clipped (with a warning) and
    keep their nominal key.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    n = domain.dim
    if xbar.size != n or not domain.contains(xbar):
        raise ValueError("nominal point must lie in the domain")
    f0 = float(np.asarray(target(xbar[None, :]), dtype=float).reshape(-1)[0])
    if not abs(f0) >= NOMINAL_GUARD:
        raise DegenerateNominal(
            f"|f(xbar)| = {abs(f0):.3g} < {NOMINAL_GUARD}; shift the objective by a constant")
    plan = _resolve_tuples(n, tuples)
    step = rho * domain.width
    blocks, sizes = [], []
    for m, (idx, sg, _) in plan.items():
        blocks.append(perturb(xbar, step, idx, sg))
        sizes.append(len(idx))
    pts = np.vstack(blocks) if blocks else np.empty((0, n))
    outside = ~domain.contains(pts)
    if outside.any():
        logger.warning("mvmsl: %d of %d perturbation samples clipped to the domain",
                       int(outside.sum()), len(pts))
        pts = domain.clip(pts)
    fp = np.asarray(target(pts), dtype=float).reshape(-1) if len(pts) else np.empty(0)
    eff = np.abs(f0 - fp) / abs(f0)
    levels, start = {}, 0
    for (m, (idx, sg, complete)), size in zip(plan.items(), sizes):
        levels[m] = LevelEffects(idx, sg, eff[start:start + size], complete)
        start += size
    return ElementaryEffects(xbar, f0, rho, n, levels, int(outside.sum()))


def aggregate(effects: ElementaryEffects) -> LocalIndices:
    """Sign-averaged effects per tuple and their per-variable averages."""
    n = effects.n
    for m in LEVELS:
        if m <= n and (m not in effects.levels or not effects.levels[m].complete):
            raise IncompleteEffects(f"level {m} effects are not fully enumerated")
    e1 = effects.levels[1].effects.reshape(n, 2)
    SI1 = (e1[:, 0] + e1[:, 1]) / 2.0
    SI2_pair = np.zeros((n, n))
    SI2 = np.zeros(n)
    if n >= 2:
        lev = effects.levels[2]
        pair_idx = lev.indices[::4]
        pair_mean = lev.effects.reshape(-1, 4).sum(axis=1) / 4.0
        SI2_pair[pair_idx[:, 0], pair_idx[:, 1]] = pair_mean
        SI2_pair[pair_idx[:, 1], pair_idx[:, 0]] = pair_mean
        SI2 = SI2_pair.sum(axis=1) / (n - 1)
    SI3_triple: dict[tuple[int, int, int], float] = {}
    SI3 = np.zeros(n)
    if n >= 3:
        lev = effects.levels[3]
        tri_idx = lev.indices[::8]
        tri_mean = lev.effects.reshape(-1, 8).sum(axis=1) / 8.0
        SI3_triple = {tuple(int(v) for v in t): float(v) for t, v in zip(tri_idx, tri_mean)}
        for k in range(3):
            np.add.at(SI3, tri_idx[:, k], tri_mean)
        SI3 = SI3 / ((n - 1) * (n - 2) / 2)
    return LocalIndices(SI1, SI2_pair, SI3_triple, SI2, SI3)


def h_matrix(local: LocalIndices) -> np.ndarray:
    H = local.SI2_pair.copy()
    np.fill_diagonal(H, local.SI1)
    return H


def h_eig(local: LocalIndices) -> EigIndices:
    """Eigen-indices: |components| of the two eigenvectors of largest |eigenvalue|."""
    H = h_matrix(local)
    n = len(H)
    vals, vecs = np.linalg.eigh(H)
    order = np.lexsort((np.arange(n), -vals, -np.abs(vals)))
    vals, vecs = vals[order], vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    U1 = np.abs(vecs[:, 0])
    U2 = np.abs(vecs[:, 1]) if n > 1 else np.zeros(n)
    return EigIndices(H, vals, vecs, U1, U2)


def mvmsl(target, domain: BoxDomain, xbar, rho: float) -> MvmslResult:
    """Full enumeration, aggregation and eigen-indices on ``target``."""
    eff = elementary_effects(target, domain, xbar, rho, "all")
    local = aggregate(eff)
    return MvmslResult(eff, local, h_eig(local))


def surrogate_target(model, domain: BoxDomain):
    """Wrap a unit-cube surrogate as a target in original coordinates."""
    def target(X):
        return model.predict((np.asarray(X, dtype=float) - domain.lower) / domain.width)
    return target


def mvmsl_on_surrogate(model, domain: BoxDomain, xbar, rho: float,
                       design_used=None) -> MvmslResult:
    """MVMSL with every effect computed on the surrogate.

    ``design_used`` (the objective-oriented design the model was fitted on)
    is informational only; the full perturbation set is always enumerated.
    """
    return mvmsl(surrogate_target(model, domain), domain, xbar, rho)


def full_count(n: int) -> int:
    return 2 * n + 2 * n * (n - 1) + 4 * n * (n - 1) * (n - 2) // 3


def write_effects(effects: ElementaryEffects, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "indices", "signs", "rho", "effect"])
        for m, lev in sorted(effects.levels.items()):
            for idx, sg, e in zip(lev.indices, lev.signs, lev.effects):
                w.writerow([m, ";".join(str(int(i) + 1) for i in idx),
                            "".join("+" if s > 0 else "-" for s in sg),
                            f"{effects.rho:.17g}", f"{e:.17g}"])


def write_aggregates(result: MvmslResult, path) -> None:
    v = result.vectors()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "SI1", "SI2", "SI3", "E1", "E2"])
        for i in range(len(v["SI1"])):
            w.writerow([i + 1] + [f"{v[k][i]:.17g}" for k in ("SI1", "SI2", "SI3", "E1", "E2")])

