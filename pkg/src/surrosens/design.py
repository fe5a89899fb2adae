"""Space-filling and objective-oriented experimental designs.

All designs live in the unit cube; callers map them onto a domain.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import SurrosensError

logger = logging.getLogger(__name__)


class CountExceedsPopulation(SurrosensError):
    pass


@dataclass
class DesignMatrix:
    points: np.ndarray
    kind: str
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{k + 1}" for k in range(self.points.shape[1])])
            for p in self.points:
                w.writerow([f"{v:.17g}" for v in p])


def latin_hypercube(m: int, n: int, seed=None, jitter: bool = True) -> DesignMatrix:
    """m-point Latin hypercube in [0, 1]^n.

    With ``jitter=False`` every point sits at its stratum midpoint.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    rng = np.random.default_rng(seed)
    perms = np.column_stack([rng.permutation(m) for _ in range(n)])
    offset = rng.random((m, n)) if jitter else 0.5
    return DesignMatrix((perms + offset) / m, "lhs", seed)


def _sqdist_to(points: np.ndarray, row: np.ndarray) -> np.ndarray:
    d = points - row
    return np.einsum("ij,ij->i", d, d)


def maximin_lhs(m: int, n: int, seed=None, iters: int = 10_000,
                jitter: bool = True) -> DesignMatrix:
    """Latin hypercube improved by stratum-preserving swaps.

    A random pair of entries within one column is swapped; the swap is kept
    when the smallest pairwise distance does not shrink.
    """
    if m < 2:
        raise ValueError("maximin_lhs needs m >= 2")
    rng = np.random.default_rng(seed)
    x = latin_hypercube(m, n, rng, jitter=jitter).points
    if iters > 0:
        d2 = squareform(pdist(x, "sqeuclidean"))
        np.fill_diagonal(d2, np.inf)
        best = d2.min()
        for _ in range(iters):
            k = rng.integers(n)
            a, b = rng.choice(m, size=2, replace=False)
            xa, xb = x[a].copy(), x[b].copy()
            xa[k], xb[k] = x[b, k], x[a, k]
            da = _sqdist_to(x, xa)
            db = _sqdist_to(x, xb)
            da[a] = db[b] = np.inf
            dab = float(np.sum((xa - xb) ** 2))
            da[b] = db[a] = dab
            if min(da.min(), db.min()) < best:
                continue
            # the old closest pair may have involved a or b
            touched = np.isclose(d2[a].min(), best) or np.isclose(d2[b].min(), best)
            x[a], x[b] = xa, xb
            d2[a], d2[:, a] = da, da
            d2[b], d2[:, b] = db, db
            if touched:
                best = d2.min()
    return DesignMatrix(x, "maximin_lhs", seed)


def min_distance(points: np.ndarray) -> float:
    return float(pdist(points).min()) if len(points) > 1 else math.inf


def has_latin_property(points: np.ndarray) -> bool:
    m = len(points)
    strata = np.floor(points * m).astype(int)
    strata = np.minimum(strata, m - 1)
    return all(len(np.unique(strata[:, k])) == m for k in range(points.shape[1]))


# ---------------------------------------------------------------------------
# perturbation samples around a nominal point


def level_population(n: int, level: int) -> int:
    """Number of signed perturbation samples touching ``level`` coordinates."""
    return math.comb(n, level) * 2 ** level


def tuple_indices(n: int, level: int) -> np.ndarray:
    """All sorted coordinate tuples of size ``level``, lexicographic."""
    combos = list(itertools.combinations(range(n), level))
    return np.array(combos, dtype=int).reshape(len(combos), level)


def sign_patterns(level: int) -> np.ndarray:
    """The 2^level sign vectors in binary order with + encoded as bit 0."""
    bits = np.array(list(itertools.product((0, 1), repeat=level)), dtype=int)
    return (1 - 2 * bits).reshape(2 ** level, level)


def perturbation_keys(n: int, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat key space for one level: (indices, signs), each of shape (N, level).

    Ordering is tuple-major, then sign pattern, so key ``t * 2**level + s``
    is tuple ``t`` with sign pattern ``s``.
    """
    idx = tuple_indices(n, level)
    sg = sign_patterns(level)
    return np.repeat(idx, len(sg), axis=0), np.tile(sg, (len(idx), 1))


def perturb(center: np.ndarray, step: np.ndarray, indices: np.ndarray,
            signs: np.ndarray) -> np.ndarray:
    """Points center + sign * step on the listed coordinates (unclipped)."""
    center = np.asarray(center, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), center.shape)
    out = np.repeat(center[None, :], len(indices), axis=0)
    rows = np.arange(len(indices))[:, None]
    out[rows, indices] = center[indices] + signs * step[indices]
    return out


def sample_without_replacement(population: int, k: int, rng) -> np.ndarray:
    """First k slots of a seeded partial Fisher-Yates shuffle of range(population)."""
    if k > population:
        raise CountExceedsPopulation(f"cannot draw {k} from {population}")
    pool = np.arange(population)
    for i in range(k):
        j = int(rng.integers(i, population))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k].copy()


@dataclass
class OODesignSpec:
    center: np.ndarray
    rho: float
    n_uni: int
    n_bi: int
    n_tri: int
    seed: int | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        n = self.center.size
        for count, level in ((self.n_uni, 1), (self.n_bi, 2), (self.n_tri, 3)):
            if count < 0:
                raise ValueError("counts must be nonnegative")
            if count > level_population(n, level):
                raise CountExceedsPopulation(
                    f"{count} level-{level} samples requested, only "
                    f"{level_population(n, level)} exist for n={n}")

    @classmethod
    def default_counts(cls, center, rho: float, seed=None) -> "OODesignSpec":
        """All univariate samples plus 45n bivariate and 40n trivariate ones.

        Counts are capped at each level's population for small n.
        """
        n = np.asarray(center).size
        return cls(center, rho, 2 * n, min(45 * n, level_population(n, 2)),
                   min(40 * n, level_population(n, 3)), seed)


def oo_design(spec: OODesignSpec, domain=None) -> DesignMatrix:
    """Objective-oriented design: a random subset of the perturbation samples.

    Univariate samples are taken in enumeration order (all of them when
    ``n_uni == 2n``); bivariate and trivariate samples are drawn without
    replacement. Samples leaving the unit cube are clipped with a warning.
    ``domain`` is accepted for interface symmetry; the design is in unit
    coordinates where the step is simply ``rho``.
    """
    c = spec.center
    n = c.size
    if np.any(c < 0) or np.any(c > 1):
        raise ValueError("center must be in normalized [0, 1]^n coordinates")
    rng = np.random.default_rng(spec.seed)
    blocks = []
    for level, count in ((1, spec.n_uni), (2, spec.n_bi), (3, spec.n_tri)):
        if count == 0 or level > n:
            continue
        idx, sg = perturbation_keys(n, level)
        if count < len(idx):
            if level == 1:
                pick = np.arange(count)
            else:
                pick = sample_without_replacement(len(idx), count, rng)
            idx, sg = idx[pick], sg[pick]
        blocks.append(perturb(c, spec.rho, idx, sg))
    pts = np.vstack(blocks) if blocks else np.empty((0, n))
    clipped = np.any((pts < 0) | (pts > 1), axis=1)
    if clipped.any():
        logger.warning("oo_design: %d of %d samples clipped to the unit cube (rows %s)",
                       int(clipped.sum()), len(pts), np.flatnonzero(clipped)[:20].tolist())
        pts = np.clip(pts, 0.0, 1.0)
    return DesignMatrix(pts, "oo", spec.seed)


def box_design(points: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Map unit-cube design points into the sub-box [lower, upper]."""
    return lower + points * (upper - lower)
