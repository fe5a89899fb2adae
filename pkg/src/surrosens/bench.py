"""Accuracy metrics, gold-standard references and the seeded design comparison.

For each seed the comparison runs the optimization-trace pipeline (O3AED:
optimizer trace, extra design points, surrogate, sensitivity analysis on
the surrogate), a Latin-hypercube-only surrogate with the same number of
expensive evaluations, and, for Extended FAST, direct estimation on the
true function. Every arm is scored against a reference computed on the
true function.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import BlackBox, EvaluationLog, SurrosensError, builtin, evaluate_batch
from .design import OODesignSpec, box_design, maximin_lhs, oo_design
from .efast import FastIndices, budget_plan, fast_indices, reference_plan
from .mvmsl import ElementaryEffects, MvmslResult, PerturbationTuple, mvmsl, surrogate_target
from .optimizer import OptimizerConfig, optimize
from .surrogate import fit_kriging, fit_rbf

logger = logging.getLogger(__name__)

DEFAULT_TOP = 100
REF_PER_FACTOR = 10_000
DIRECT_MIN_PER_FACTOR = 65

_STAGES = {"opt": 1, "ext": 2, "lhd": 3, "plan": 4, "direct": 5, "kriging": 6}


class ZeroReference(SurrosensError):
    pass


class KeyMismatch(SurrosensError):
    pass


def stage_seed(seed: int, stage: str) -> int:
    """Independent, reproducible sub-seed for one pipeline stage."""
    return int(np.random.SeedSequence([int(seed), _STAGES[stage]]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# metrics


def rel_err(computed, reference) -> float:
    """||computed - reference||_2 / ||reference||_2."""
    c = np.asarray(computed, dtype=float)
    r = np.asarray(reference, dtype=float)
    if c.shape != r.shape:
        raise ValueError(f"shape mismatch {c.shape} vs {r.shape}")
    nr = np.linalg.norm(r)
    if nr == 0:
        raise ZeroReference("reference vector has zero norm")
    return float(np.linalg.norm(c - r) / nr)


def _level_map(effects, level: int | None) -> dict:
    if isinstance(effects, ElementaryEffects):
        lev = effects.level(level)
        return {(tuple(int(i) for i in idx), tuple(int(s) for s in sg)): float(e)
                for idx, sg, e in zip(lev.indices, lev.signs, lev.effects)}
    out = {}
    for k, v in effects.items():
        if isinstance(k, PerturbationTuple):
            if level is not None and len(k.indices) != level:
                continue
            k = (k.indices, k.signs)
        out[k] = float(v)
    return out


def top_keys(effect_map: dict, s: int) -> list:
    """The s keys with the largest effects; ties go to the lexicographically smaller key."""
    return sorted(effect_map, key=lambda k: (-effect_map[k], k))[:s]


def matching_rate(computed_effects, reference_effects, level: int | None = None,
                  s: int = DEFAULT_TOP) -> float:
    """Fraction of the reference's top-s perturbations also in the computed top-s."""
    c = _level_map(computed_effects, level)
    r = _level_map(reference_effects, level)
    if set(c) != set(r):
        raise KeyMismatch("effect maps cover different perturbation keys")
    if not 1 <= s <= len(r):
        raise ValueError(f"s must be in [1, {len(r)}]")
    return len(set(top_keys(c, s)) & set(top_keys(r, s))) / s


def rank_order(values) -> np.ndarray:
    """Variable indices sorted by descending value, ascending index on ties."""
    v = np.asarray(values, dtype=float)
    return np.lexsort((np.arange(len(v)), -v))


# ---------------------------------------------------------------------------
# references


def _problem_key(bb: BlackBox) -> dict:
    return {"kind": bb.kind, "domain": bb.domain.to_dict()}


def reference_key(bb: BlackBox, seed: int = 0, per_factor: int = REF_PER_FACTOR) -> str:
    """Hash identifying a reference Extended FAST run (problem and plan)."""
    plan = reference_plan(bb.dim, per_factor, seed=seed)
    key = {**_problem_key(bb), "plan": plan.to_dict()}
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def logged_target(bb: BlackBox, log: EvaluationLog, tag: str):
    def target(X):
        return evaluate_batch(bb, X, log, tag)
    return target


def reference_efast(bb: BlackBox, seed: int = 0, per_factor: int = REF_PER_FACTOR,
                    log: EvaluationLog | None = None, cache_dir=None) -> FastIndices:
    """Extended FAST on the true function with ``per_factor`` (odd-rounded) samples per factor.

    With ``cache_dir`` the result is stored on disk; a cache hit performs no
    evaluations.
    """
    plan = reference_plan(bb.dim, per_factor, seed=seed)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"ref_efast_{reference_key(bb, seed, per_factor)}.json"
    if path is not None and path.exists():
        return FastIndices.from_dict(json.loads(path.read_text())["indices"])
    log = log if log is not None else EvaluationLog(bb.domain)
    ind = fast_indices(logged_target(bb, log, "reference"), bb.domain, plan)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"indices": ind.to_dict(), "plan": plan.to_dict(),
                                    "problem": _problem_key(bb), "evaluations": len(log)},
                                   sort_keys=True, indent=1) + "\n")
    return ind


def reference_mvmsl(bb: BlackBox, xbar, rho: float,
                    log: EvaluationLog | None = None) -> MvmslResult:
    """Full MVMSL enumeration on the true function (tag ``reference``)."""
    log = log if log is not None else EvaluationLog(bb.domain)
    return mvmsl(logged_target(bb, log, "reference"), bb.domain, xbar, rho)


# ---------------------------------------------------------------------------
# comparison harness


@dataclass
class ComparisonReport:
    method: str
    seed: int | None
    indices: dict
    rel_err: dict = field(default_factory=dict)
    ranks: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    budgets: dict = field(default_factory=dict)
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)


def _fit(kind: str, U, y, seed: int, kriging_opts: dict):
    if kind == "rbf":
        return fit_rbf(U, y)
    if kind == "kriging":
        return fit_kriging(U, y, seed=stage_seed(seed, "kriging"), **kriging_opts)
    raise ValueError(f"unknown surrogate kind {kind!r}")


def _budgets(log: EvaluationLog) -> dict:
    counts = {t: log.count(t) for t in ("opt", "lhd", "oo", "direct")}
    counts = {t: c for t, c in counts.items() if c}
    counts["total"] = len(log)
    return counts


def _efast_report(method, seed, ind: FastIndices, ref: FastIndices | None, budgets) -> ComparisonReport:
    rep = ComparisonReport(method, seed, ind.to_dict(), budgets=budgets)
    rep.ranks = {"S": (rank_order(ind.S) + 1).tolist(), "ST": (rank_order(ind.ST) + 1).tolist()}
    if ref is not None:
        rep.rel_err = {"S": rel_err(ind.S, ref.S), "ST": rel_err(ind.ST, ref.ST)}
    return rep


def _mvmsl_report(method, seed, res: MvmslResult, ref: MvmslResult | None, budgets,
                  top: int) -> ComparisonReport:
    vec = res.vectors()
    rep = ComparisonReport(method, seed, {k: v.tolist() for k, v in vec.items()}, budgets=budgets)
    rep.indices["eigvals"] = res.eig.eigvals[:2].tolist()
    rep.indices["xbar"] = res.effects.base.tolist()
    rep.indices["f_xbar"] = res.effects.f_base
    rep.ranks = {k: (rank_order(v) + 1).tolist() for k, v in vec.items()}
    if ref is not None:
        rep.rel_err = {k: rel_err(v, ref.vectors()[k]) for k, v in vec.items()}
        for m in (2, 3):
            if m in res.effects.levels:
                keys = len(res.effects.levels[m].effects)
                rep.gamma[f"gamma{m}"] = matching_rate(res.effects, ref.effects, m, min(top, keys))
    return rep


def efast_on_model(model, domain, seed: int, per_factor: int = REF_PER_FACTOR) -> FastIndices:
    plan = reference_plan(domain.dim, per_factor, seed=stage_seed(seed, "plan"))
    return fast_indices(surrogate_target(model, domain), domain, plan)


def best_point(log: EvaluationLog, tags=("opt",)) -> tuple[np.ndarray, float]:
    """Lowest recorded value among ``tags`` (earliest record on ties)."""
    y = log.values(tags)
    if len(y) == 0:
        raise SurrosensError(f"log has no records tagged {tags}")
    k = int(np.argmin(y))
    return log.points(tags)[k].copy(), float(y[k])


def extend_design(bb: BlackBox, log: EvaluationLog, mode: str, seed: int, n_ext: int = 0,
                  rho: float = 0.2, oo_counts=None) -> int:
    """Step 2 of the pipeline: add design points to an optimization log.

    ``efast`` mode adds a maximin LHD of ``n_ext`` points over the whole box
    (tag ``lhd``); ``mvmsl`` mode adds the objective-oriented design around
    the best traced point (tag ``oo``). Returns the number of new records.
    """
    dom = bb.domain
    before = len(log)
    if mode == "efast":
        if n_ext > 0:
            U = maximin_lhs(n_ext, bb.dim, stage_seed(seed, "ext")).points
            evaluate_batch(bb, dom.lower + U * dom.width, log, "lhd")
    elif mode == "mvmsl":
        xbar, _ = best_point(log)
        ubar = (xbar - dom.lower) / dom.width
        if oo_counts is None:
            spec = OODesignSpec.default_counts(ubar, rho, seed=stage_seed(seed, "ext"))
        else:
            spec = OODesignSpec(ubar, rho, *oo_counts, seed=stage_seed(seed, "ext"))
        D = oo_design(spec, dom).points
        evaluate_batch(bb, dom.lower + D * dom.width, log, "oo")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return len(log) - before


def o3aed_log(bb: BlackBox, mode: str, n_opt: int, seed: int, n_ext: int = 0,
              rho: float = 0.2, oo_counts=None) -> EvaluationLog:
    """Optimization trace plus the mode's design extension."""
    log = EvaluationLog(bb.domain)
    optimize(bb, OptimizerConfig(n_opt, bb.dim, seed=stage_seed(seed, "opt")), log)
    extend_design(bb, log, mode, seed, n_ext, rho, oo_counts)
    return log


def run_comparison(problem, mode: str, n_opt: int, n_ext: int = 0, seeds=(0,),
                   surrogates=("rbf",), rho: float = 0.2, oo_counts=None,
                   ref_seed: int = 0, cache_dir=None, top: int = DEFAULT_TOP,
                   kriging_opts: dict | None = None, with_direct: bool = True,
                   surrogate_per_factor: int = REF_PER_FACTOR,
                   lhd_surrogates=None) -> list[ComparisonReport]:
    """Seeded comparison of surrogate designs against direct sampling and a reference.

    ``mode`` is ``"efast"`` or ``"mvmsl"``. For MVMSL the extension is the
    objective-oriented design (``oo_counts`` = (uni, bi, tri), default
    (2n, 45n, 40n)) and the LHD arm reuses the optimizer trace plus a
    maximin LHD of equal size inside the rho-box around the optimum.
    ``lhd_surrogates`` restricts the surrogate kinds of the LHD arm
    (default: same as ``surrogates``).
    """
    bb = builtin(problem) if isinstance(problem, str) else problem
    kriging_opts = kriging_opts or {}
    arms = {"O3AED": tuple(surrogates),
            "LHD": tuple(surrogates if lhd_surrogates is None else lhd_surrogates)}
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    reports: list[ComparisonReport] = []
    if not seeds:
        return reports
    if mode == "efast":
        ref = reference_efast(bb, seed=ref_seed, cache_dir=cache_dir)
        reports.append(_efast_report("REF", None, ref, None,
                                     {"reference": bb.dim * reference_plan(bb.dim).Ns}))
        for seed in seeds:
            reports.extend(_efast_seed(bb, seed, n_opt, n_ext, arms, ref, kriging_opts,
                                       with_direct, surrogate_per_factor))
    elif mode == "mvmsl":
        for seed in seeds:
            reports.extend(_mvmsl_seed(bb, seed, n_opt, rho, oo_counts, arms, top,
                                       kriging_opts))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return reports


def _guarded(method, seed, fn) -> list[ComparisonReport]:
    try:
        return [fn()]
    except SurrosensError as exc:
        logger.warning("%s seed %s failed: %s", method, seed, exc)
        return [ComparisonReport(method, seed, {}, status=f"failed: {exc}")]


def _efast_seed(bb, seed, n_opt, n_ext, arms, ref, kriging_opts, with_direct,
                per_factor) -> list[ComparisonReport]:
    out = []
    dom, n = bb.domain, bb.dim
    o3_log = o3aed_log(bb, "efast", n_opt, seed, n_ext)
    lhd_log = EvaluationLog(dom)
    U = maximin_lhs(n_opt + n_ext, n, stage_seed(seed, "lhd")).points
    evaluate_batch(bb, dom.lower + U * dom.width, lhd_log, "lhd")
    for label, log in (("O3AED", o3_log), ("LHD", lhd_log)):
        for kind in arms[label]:
            def arm(log=log, kind=kind, label=label):
                model = _fit(kind, log.unit_points(), log.values(), seed, kriging_opts)
                ind = efast_on_model(model, dom, seed, per_factor)
                return _efast_report(f"{label}_{kind_label(kind)}", seed, ind, ref, _budgets(log))
            out.extend(_guarded(f"{label}_{kind}", seed, arm))
    if with_direct:
        def direct():
            log = EvaluationLog(dom)
            budget = max(n_opt + n_ext, DIRECT_MIN_PER_FACTOR * n)
            plan = budget_plan(n, budget, seed=stage_seed(seed, "direct"),
                               min_per_factor=DIRECT_MIN_PER_FACTOR)
            ind = fast_indices(logged_target(bb, log, "direct"), dom, plan)
            return _efast_report("DIRECT", seed, ind, ref, _budgets(log))
        out.extend(_guarded("DIRECT", seed, direct))
    return out


def kind_label(kind: str) -> str:
    return {"rbf": "RBF", "kriging": "Kriging"}[kind]


def _mvmsl_seed(bb, seed, n_opt, rho, oo_counts, arms, top, kriging_opts):
    dom, n = bb.domain, bb.dim
    o3_log = o3aed_log(bb, "mvmsl", n_opt, seed, rho=rho, oo_counts=oo_counts)
    xbar, _ = best_point(o3_log)
    ubar = (xbar - dom.lower) / dom.width
    n_ext = o3_log.count("oo")

    lhd_log = EvaluationLog(dom)
    lhd_log.copy_records(o3_log, tags=("opt",))
    lo, hi = np.clip(ubar - rho, 0.0, 1.0), np.clip(ubar + rho, 0.0, 1.0)
    U = box_design(maximin_lhs(n_ext, n, stage_seed(seed, "lhd")).points, lo, hi)
    evaluate_batch(bb, dom.lower + U * dom.width, lhd_log, "lhd")

    ref = reference_mvmsl(bb, xbar, rho)
    out = [_mvmsl_report("REF", seed, ref, None, {"reference": len(ref.effects)}, top)]
    for label, log in (("O3AED", o3_log), ("LHD", lhd_log)):
        for kind in arms[label]:
            def arm(log=log, kind=kind, label=label):
                model = _fit(kind, log.unit_points(), log.values(), seed, kriging_opts)
                r = mvmsl(surrogate_target(model, dom), dom, xbar, rho)
                return _mvmsl_report(f"{label}_{kind_label(kind)}", seed, r, ref, _budgets(log), top)
            out.extend(_guarded(f"{label}_{kind}", seed, arm))
    return out


# ---------------------------------------------------------------------------
# report bundle


def reports_to_json(reports: list[ComparisonReport], meta: dict) -> str:
    payload = {"meta": meta, "reports": [r.to_dict() for r in reports]}
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def write_rank_tables(reports: list[ComparisonReport], out_dir, families) -> list[Path]:
    """One CSV per (seed, family): rank, then (i, value) columns per method.

    The reference column is repeated in every seed's table.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    refs = [r for r in reports if r.method == "REF" and r.status == "ok"]
    seeds = sorted({r.seed for r in reports if r.seed is not None})
    for seed in seeds:
        group = [r for r in refs if r.seed in (None, seed)][:1]
        group += [r for r in reports if r.seed == seed and r.method != "REF" and r.status == "ok"]
        for fam in families:
            cols = [r for r in group if fam in r.indices]
            if not cols:
                continue
            n = len(cols[0].indices[fam])
            path = out_dir / f"ranks_{fam}_seed{seed}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                header = ["rank"]
                for r in cols:
                    header += [f"{r.method}_i", f"{r.method}_value"]
                w.writerow(header)
                for k in range(n):
                    row = [k + 1]
                    for r in cols:
                        i = r.ranks[fam][k]
                        row += [i, f"{r.indices[fam][i - 1]:.6f}"]
                    w.writerow(row)
                if any(fam in r.rel_err for r in cols):
                    w.writerow(["Rel_Err"] + sum(
                        [["", f"{r.rel_err[fam]:.6f}" if fam in r.rel_err else ""] for r in cols], []))
            paths.append(path)
    return paths


def summarize(reports: list[ComparisonReport]) -> dict:
    """Median Rel_Err per (method, family) across seeds."""
    acc: dict = {}
    for r in reports:
        for fam, v in r.rel_err.items():
            acc.setdefault(r.method, {}).setdefault(fam, []).append(v)
    return {m: {f: float(np.median(v)) for f, v in fams.items()} for m, fams in sorted(acc.items())}
