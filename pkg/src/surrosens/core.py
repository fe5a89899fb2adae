"""Box domains, black-box functions and the budgeted evaluation log."""

from __future__ import annotations

import csv
import math
import re
import selectors
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

TAGS = ("opt", "lhd", "oo", "direct", "reference")

DEFAULT_DEDUP_TOL = 1e-8


class SurrosensError(Exception):
    """Base class for all errors raised by this package."""


class BudgetExhausted(SurrosensError):
    pass


class OutOfDomain(SurrosensError):
    pass


class EvalFailed(SurrosensError):
    pass


class UnknownBuiltin(SurrosensError):
    pass


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ValueError("lower and upper must be 1-d vectors of equal length >= 1")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("domain bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError("lower[k] < upper[k] required for every coordinate")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> "BoxDomain":
        return cls(np.full(n, lo), np.full(n, hi))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=-1)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxDomain":
        return cls(np.array(d["lower"], dtype=float), np.array(d["upper"], dtype=float))


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.size == dim else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def normalize(domain: BoxDomain, x) -> np.ndarray:
    """Map points of ``domain`` affinely onto the unit cube."""
    x = np.asarray(x, dtype=float)
    if not np.all(domain.contains(x)):
        raise OutOfDomain("point outside the domain")
    return (x - domain.lower) / domain.width


def denormalize(domain: BoxDomain, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise OutOfDomain("normalized point outside [0, 1]^n")
    # endpoints are mapped exactly so that round trips never leave the domain
    x = domain.lower + u * domain.width
    return np.where(u == 1.0, domain.upper, x)


@dataclass(frozen=True)
class EvaluationRecord:
    x: np.ndarray
    y: float
    tag: str
    seq: int


class EvaluationLog:
    """Ordered, deduplicated record of every expensive evaluation.

    Points closer than ``dedup_tol`` (max-norm, unit-cube coordinates) to an
    existing record are treated as the same point: their cached value is
    returned and nothing is charged against ``budget``.
    """

    def __init__(self, domain: BoxDomain, budget: int | None = None,
                 dedup_tol: float = DEFAULT_DEDUP_TOL):
        if dedup_tol < 0:
            raise ValueError("dedup_tol must be nonnegative")
        if budget is not None and budget < 0:
            raise ValueError("budget must be nonnegative")
        self.domain = domain
        self.budget = budget
        self.dedup_tol = dedup_tol
        self._records: list[EvaluationRecord] = []
        self._unit = np.empty((0, domain.dim))
        self._chunks: list[np.ndarray] = []
        self._tree: cKDTree | None = None
        self._next_seq = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[EvaluationRecord]:
        return list(self._records)

    @property
    def remaining(self) -> float:
        return math.inf if self.budget is None else self.budget - len(self)

    def count(self, tag: str | None = None) -> int:
        if tag is None:
            return len(self._records)
        return sum(1 for r in self._records if r.tag == tag)

    def points(self, tags: Iterable[str] | None = None) -> np.ndarray:
        recs = self._select(tags)
        if not recs:
            return np.empty((0, self.domain.dim))
        return np.array([r.x for r in recs])

    def values(self, tags: Iterable[str] | None = None) -> np.ndarray:
        return np.array([r.y for r in self._select(tags)], dtype=float)

    def unit_points(self, tags: Iterable[str] | None = None) -> np.ndarray:
        return (self.points(tags) - self.domain.lower) / self.domain.width

    def _select(self, tags) -> list[EvaluationRecord]:
        if tags is None:
            return self._records
        tags = {tags} if isinstance(tags, str) else set(tags)
        return [r for r in self._records if r.tag in tags]

    def _all_unit(self) -> np.ndarray:
        if self._chunks:
            self._unit = np.vstack([self._unit, *self._chunks])
            self._chunks = []
            self._tree = None
        return self._unit

    def lookup(self, u: np.ndarray) -> np.ndarray:
        """Index of a record within dedup_tol of each unit point, or -1."""
        allu = self._all_unit()
        out = np.full(len(u), -1, dtype=int)
        if len(allu) == 0 or len(u) == 0:
            return out
        if self._tree is None:
            self._tree = cKDTree(allu)
        d, j = self._tree.query(u, k=1, p=np.inf, distance_upper_bound=self.dedup_tol)
        hit = np.isfinite(d)
        out[hit] = j[hit]
        return out

    def append(self, x, y: float, tag: str) -> EvaluationRecord:
        """Append one record without deduplication or budget checks (used by loaders)."""
        if tag not in TAGS:
            raise ValueError(f"unknown tag {tag!r}")
        x = np.array(x, dtype=float)
        x.flags.writeable = False
        rec = EvaluationRecord(x=x, y=float(y), tag=tag, seq=self._next_seq)
        self._next_seq += 1
        self._records.append(rec)
        self._chunks.append(((x - self.domain.lower) / self.domain.width).reshape(1, -1))
        return rec

    def copy_records(self, other: "EvaluationLog", tags: Iterable[str] | None = None) -> None:
        for r in other._select(tags):
            self.append(r.x, r.y, r.tag)

    # CSV persistence: header seq,tag,y,x1..xn with 17 significant digits.
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seq", "tag", "y"] + [f"x{k + 1}" for k in range(self.domain.dim)])
            for r in self._records:
                w.writerow([r.seq, r.tag, f"{r.y:.17g}"] + [f"{v:.17g}" for v in r.x])

    @classmethod
    def from_csv(cls, path, domain: BoxDomain, budget: int | None = None,
                 dedup_tol: float = DEFAULT_DEDUP_TOL) -> "EvaluationLog":
        log = cls(domain, budget=budget, dedup_tol=dedup_tol)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, rows = rows[0], rows[1:]
        if header[:3] != ["seq", "tag", "y"] or len(header) - 3 != domain.dim:
            raise ValueError(f"{path}: malformed log header {header}")
        for row in rows:
            log.append([float(v) for v in row[3:]], float(row[2]), row[1])
        return log


@dataclass
class BlackBox:
    """A deterministic scalar function on a box.

    ``func`` maps an (m, n) array of points in original coordinates to an
    (m,) array of values.
    """

    dim: int
    domain: BoxDomain
    kind: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        return np.asarray(self.func(pts), dtype=float).reshape(-1)

    def close(self) -> None:
        closer = getattr(self.func, "close", None)
        if closer is not None:
            closer()


def evaluate_batch(bb: BlackBox, points, log: EvaluationLog, tag: str) -> np.ndarray:
    """Evaluate ``bb`` at ``points``, recording fresh evaluations in ``log``.

    Points already in the log (or repeated within the batch) are served from
    the cache. The budget check happens before anything is evaluated, so a
    failing call leaves the log unchanged.
    """
    if tag not in TAGS:
        raise ValueError(f"unknown tag {tag!r}")
    pts = _as_points(points, bb.dim)
    if len(pts) == 0:
        return np.empty(0)
    if not np.all(bb.domain.contains(pts)):
        bad = np.flatnonzero(~bb.domain.contains(pts))
        raise OutOfDomain(f"{len(bad)} point(s) outside the domain, first at index {bad[0]}")
    u = (pts - log.domain.lower) / log.domain.width
    with log._lock:
        cached = log.lookup(u)
        alias = np.full(len(pts), -1, dtype=int)
        todo = np.flatnonzero(cached < 0)
        if len(todo) > 1:
            # collapse duplicates inside the batch onto their first occurrence
            root = np.arange(len(todo))
            pairs = cKDTree(u[todo]).query_pairs(log.dedup_tol, p=np.inf, output_type="ndarray")
            for a, b in sorted(map(tuple, pairs)):
                root[b] = min(root[b], root[a])
            for b in range(len(todo)):
                if root[b] != b:
                    alias[todo[b]] = todo[root[b]]
            fresh = todo[root == np.arange(len(todo))].tolist()
        else:
            fresh = todo.tolist()
        if len(fresh) > log.remaining:
            raise BudgetExhausted(
                f"{len(fresh)} new evaluation(s) requested, {log.remaining} left in budget")
        y_fresh = bb(pts[fresh]) if fresh else np.empty(0)
        if y_fresh.shape != (len(fresh),) or not np.all(np.isfinite(y_fresh)):
            raise EvalFailed("black box returned non-finite or malformed values")
        out = np.empty(len(pts))
        recs = log._records
        for i in np.flatnonzero(cached >= 0):
            out[i] = recs[cached[i]].y
        for i, y in zip(fresh, y_fresh):
            out[i] = y
            log.append(pts[i], y, tag)
        for i in np.flatnonzero(alias >= 0):
            out[i] = out[alias[i]]
    return out


# ---------------------------------------------------------------------------
# built-in analytic functions

TP1_COEFFS = np.array([-35.0, -28.0, -20.0, -16.0, -10.0, -6.0, -4.0, -2.0, -1.0, -0.02])


def testproblem1(x: np.ndarray) -> np.ndarray:
    """sum_i exp(x_i) (c_i + x_i - ln sum_k exp(x_k)) on [-1, 1]^10.

    The log-sum runs over x_k (the Hock-Schittkowski form), not x_i.
    """
    x = np.asarray(x, dtype=float)
    ex = np.exp(x)
    lse = np.log(ex.sum(axis=-1, keepdims=True))
    return np.sum(ex * (TP1_COEFFS + x - lse), axis=-1)


ADDITIVE10_WEIGHTS = 2.0 ** np.arange(9, -1, -1)


def additive10(x: np.ndarray) -> np.ndarray:
    """sum_i w_i x_i^2 with w = (512, 256, ..., 1) on [0, 1]^10."""
    return np.asarray(x, dtype=float) ** 2 @ ADDITIVE10_WEIGHTS


# interaction20: 1 + z^T Q z with z = x - target, Q = diag(w) plus sparse
# symmetric couplings 0.3 * sign * sqrt(w_i w_j) on a path plus three long
# links (max degree 3, so Q stays positive definite). Minimum value 1 at
# ``INTERACTION20_TARGET``, an interior point at least 0.3 from every face.
INTERACTION20_WEIGHTS = 2.0 ** (np.arange(19, -1, -1) / 2.0)
INTERACTION20_TARGET = 0.3 + 0.2 * (np.arange(20) % 3)
INTERACTION20_PAIRS = tuple([(i, i + 1) for i in range(19)] + [(0, 10), (3, 15), (7, 19)])


def _interaction20_matrix() -> np.ndarray:
    w = INTERACTION20_WEIGHTS
    q = np.diag(w)
    for k, (i, j) in enumerate(INTERACTION20_PAIRS):
        c = 0.3 * (-1.0) ** k * math.sqrt(w[i] * w[j])
        q[i, j] = q[j, i] = c
    return q


INTERACTION20_Q = _interaction20_matrix()


def interaction20(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=float) - INTERACTION20_TARGET
    return 1.0 + np.einsum("...i,ij,...j->...", z, INTERACTION20_Q, z)


def sphere(x: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)


_BUILTINS: dict[str, tuple[Callable, BoxDomain]] = {
    "testproblem1": (testproblem1, BoxDomain.cube(10, -1.0, 1.0)),
    "additive10": (additive10, BoxDomain.cube(10)),
    "interaction20": (interaction20, BoxDomain.cube(20)),
}

BUILTIN_NAMES = tuple(_BUILTINS) + ("sphere<N>",)


def builtin(name: str) -> BlackBox:
    """Return a named analytic test function.

    ``sphere<N>`` (e.g. ``sphere2``) is sum x_i^2 on [-1, 1]^N.
    """
    key = name.strip().lower()
    if key in _BUILTINS:
        fn, dom = _BUILTINS[key]
        return BlackBox(dim=dom.dim, domain=dom, kind=key, func=fn)
    m = re.fullmatch(r"sphere(\d+)", key)
    if m and int(m.group(1)) >= 1:
        n = int(m.group(1))
        return BlackBox(dim=n, domain=BoxDomain.cube(n, -1.0, 1.0), kind=key, func=sphere)
    raise UnknownBuiltin(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


# ---------------------------------------------------------------------------
# external simulators over a line protocol


class _LineProcess:
    """A persistent child process: one line of floats in, one float out."""

    def __init__(self, argv: Sequence[str], timeout: float | None):
        self.argv = list(argv)
        self.timeout = timeout
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, bufsize=1)
        except OSError as exc:
            raise EvalFailed(f"cannot launch {self.argv}: {exc}") from exc
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)

    def _fail(self, msg: str) -> EvalFailed:
        rc = self._proc.poll()
        if rc is not None:
            err = (self._proc.stderr.read() or "").strip().splitlines()[-3:]
            msg += f" (child exited with code {rc}; stderr: {' | '.join(err) or '<empty>'})"
        return EvalFailed(msg)

    def _one(self, x: np.ndarray) -> float:
        line = " ".join(f"{v:.17g}" for v in x) + "\n"
        try:
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise self._fail(f"write to simulator failed: {exc}") from None
        if not self._sel.select(self.timeout):
            self.close()
            raise EvalFailed(f"simulator did not answer within {self.timeout} s")
        reply = self._proc.stdout.readline()
        if reply == "":
            self._proc.wait(timeout=5)
            raise self._fail("simulator closed its output")
        try:
            y = float(reply.strip())
        except ValueError:
            raise EvalFailed(f"non-numeric reply from simulator: {reply.strip()!r}") from None
        return y

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        with self._lock:
            return np.array([self._one(x) for x in pts])

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


def external(argv, dim: int, domain: BoxDomain | None = None,
             timeout: float | None = 60.0) -> BlackBox:
    """Wrap an external simulator speaking the line protocol.

    ``argv`` is a list or a shell-style command string. The child stays
    alive across evaluations; call ``close()`` when done.
    """
    if isinstance(argv, str):
        argv = shlex.split(argv)
    domain = domain or BoxDomain.cube(dim)
    if domain.dim != dim:
        raise ValueError("domain dimension does not match dim")
    proc = _LineProcess(argv, timeout)
    return BlackBox(dim=dim, domain=domain, kind="external:" + " ".join(argv), func=proc)


def load_log(path: str | Path, domain: BoxDomain, **kw) -> EvaluationLog:
    return EvaluationLog.from_csv(path, domain, **kw)
