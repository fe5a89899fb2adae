"""Extended FAST first-order and total sensitivity indices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import BoxDomain, SurrosensError


class InvalidPlan(SurrosensError):
    pass


class DegenerateVariance(SurrosensError):
    pass


@dataclass
class FastPlan:
    """Sampling scheme: one search curve per factor, ``Ns`` points each.

    ``freqs[i, j]`` and ``phases[i, j]`` are the frequency and phase of
    factor ``j`` on the curve that studies factor ``i``.
    """

    n: int
    M: int
    Ns: int
    omega_hi: int
    comp_max: int
    freqs: np.ndarray
    phases: np.ndarray
    seed: int | None = None

    @property
    def comp_freqs(self) -> np.ndarray:
        off = ~np.eye(self.n, dtype=bool)
        return self.freqs[off].reshape(self.n, self.n - 1)

    @property
    def total_evaluations(self) -> int:
        return self.n * self.Ns

    def s_grid(self) -> np.ndarray:
        j = np.arange(self.Ns)
        return -np.pi + np.pi * (2 * j + 1) / self.Ns

    def unit_curve(self, i: int) -> np.ndarray:
        """Points of curve ``i`` in the unit cube, shape (Ns, n)."""
        s = self.s_grid()[:, None]
        arg = self.freqs[i][None, :] * s + self.phases[i][None, :]
        return 0.5 + np.arcsin(np.sin(arg)) / np.pi

    def to_dict(self) -> dict:
        return {"n": self.n, "M": self.M, "Ns": self.Ns, "omega_hi": self.omega_hi,
                "comp_max": self.comp_max, "seed": self.seed,
                "total_evaluations": self.total_evaluations}


def fast_plan(n: int, M: int = 4, Ns: int = 65, seed=None) -> FastPlan:
    """Build the frequency/phase layout for ``n`` factors.

    The studied factor runs at omega = floor((Ns - 1) / (2M)); the others
    get frequencies in 1..m, m = max(1, floor(omega / (2M))). When m < n - 1
    they cycle through 1..m in index order; otherwise they are spread evenly
    over 1..m, which keeps their harmonics apart and the total-variance
    estimate of a single curve stable.
    """
    if n < 1 or M < 1:
        raise InvalidPlan("n and M must be positive")
    if Ns % 2 == 0:
        raise InvalidPlan(f"Ns must be odd, got {Ns}")
    omega = (Ns - 1) // (2 * M)
    comp_max = max(1, omega // (2 * M))
    if omega < 1 or Ns < 2 * M * omega + 1:
        raise InvalidPlan(f"Ns={Ns} too small for M={M}")
    if omega <= M * comp_max:
        raise InvalidPlan(
            f"frequency separation fails: omega={omega} <= M*max(comp)={M * comp_max}")
    freqs = np.zeros((n, n), dtype=int)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        if comp_max >= n - 1 and n > 2:
            freqs[i, others] = np.floor(np.linspace(1, comp_max, n - 1)).astype(int)
        else:
            freqs[i, others] = np.arange(len(others)) % comp_max + 1
        freqs[i, i] = omega
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, n))
    return FastPlan(n, M, Ns, omega, comp_max, freqs, phases, seed)


def odd_ceil(k: int) -> int:
    return k if k % 2 else k + 1


def reference_plan(n: int, per_factor: int = 10_000, M: int = 4, seed=0) -> FastPlan:
    """Gold-standard plan: ``per_factor`` samples per curve, rounded up to odd."""
    return fast_plan(n, M, odd_ceil(per_factor), seed)


def budget_plan(n: int, budget: int, M: int = 4, seed=None, min_per_factor: int = 65) -> FastPlan:
    """Largest odd Ns with n * Ns <= budget, but never below ``min_per_factor``."""
    ns = max(budget // n, min_per_factor)
    if ns % 2 == 0:
        ns = ns - 1 if ns - 1 >= min_per_factor else ns + 1
    return fast_plan(n, M, ns, seed)


@dataclass
class FastIndices:
    S: np.ndarray
    ST: np.ndarray
    V: float

    def to_dict(self) -> dict:
        return {"S": self.S.tolist(), "ST": self.ST.tolist(), "V": self.V}

    @classmethod
    def from_dict(cls, d: dict) -> "FastIndices":
        return cls(np.array(d["S"], dtype=float), np.array(d["ST"], dtype=float), float(d["V"]))


def fourier_coefficients(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A_k, B_k for k = 0..(Ns-1)/2 on the symmetric s grid.

    A_k = mean(y cos(k s)), B_k = mean(y sin(k s)); computed with an FFT and a
    phase shift for the grid offset.
    """
    y = np.asarray(y, dtype=float)
    Ns = len(y)
    K = (Ns - 1) // 2
    F = np.fft.rfft(y)[:K + 1]
    k = np.arange(K + 1)
    C = np.exp(-1j * k * (np.pi / Ns - np.pi)) * F
    return C.real / Ns, -C.imag / Ns


def curve_points(plan: FastPlan, domain: BoxDomain) -> np.ndarray:
    """All n * Ns sample points, curve-major, in original coordinates."""
    u = np.vstack([plan.unit_curve(i) for i in range(plan.n)])
    return domain.lower + np.clip(u, 0.0, 1.0) * domain.width


def indices_from_values(plan: FastPlan, y: np.ndarray) -> FastIndices:
    """Indices from target values laid out as returned by :func:`curve_points`."""
    y = np.asarray(y, dtype=float).reshape(plan.n, plan.Ns)
    S = np.empty(plan.n)
    ST = np.empty(plan.n)
    Vs = np.empty(plan.n)
    K = (plan.Ns - 1) // 2
    main = plan.omega_hi * np.arange(1, plan.M + 1)
    low = np.arange(1, plan.M * plan.comp_max + 1)
    rest = np.setdiff1d(np.arange(1, K + 1), np.concatenate([main, low]))
    for i in range(plan.n):
        A, B = fourier_coefficients(y[i])
        power = A ** 2 + B ** 2
        Vi = 2.0 * power[main].sum()
        Vlow = 2.0 * power[low].sum()
        # summed as disjoint parts so V >= Vi + Vlow holds in floating point too
        V = Vi + Vlow + 2.0 * power[rest].sum()
        if V < 1e-12 * max(1.0, float(np.mean(y[i] ** 2))):
            raise DegenerateVariance(f"output variance vanishes on curve {i}")
        ST[i] = min(max(1.0 - Vlow / V, 0.0), 1.0)
        S[i] = min(max(Vi / V, 0.0), ST[i])
        Vs[i] = V
    return FastIndices(S, ST, float(Vs.mean()))


def fast_indices(target, domain: BoxDomain, plan: FastPlan) -> FastIndices:
    """Extended FAST on ``target``, a vectorized map from (m, n) points to (m,) values."""
    if plan.n != domain.dim:
        raise InvalidPlan("plan and domain dimensions differ")
    y = np.asarray(target(curve_points(plan, domain)), dtype=float)
    return indices_from_values(plan, y)


def write_indices(indices: FastIndices, csv_path, json_path=None, meta: dict | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "S", "ST"])
        for i, (s, st) in enumerate(zip(indices.S, indices.ST), start=1):
            w.writerow([i, f"{s:.17g}", f"{st:.17g}"])
    if json_path is not None:
        payload = {"indices": indices.to_dict(), **(meta or {})}
        with open(json_path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
