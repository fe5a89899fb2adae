"""Command-line pipeline: optimize, extend the design, fit, analyse, compare.

Stages exchange files in ``--out-dir``:

    log.csv              evaluation log (optimize, design)
    model_<kind>.json    fitted surrogate (fit)
    efast_<kind>.csv     indices on the surrogate (efast)
    mvmsl_<kind>_rho<r>_{effects,aggregates}.csv (mvmsl)
    report.json, ranks_*.csv (compare)
    manifest.json        versions, seeds, config and file hashes
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bench import (
    REF_PER_FACTOR, best_point, efast_on_model, extend_design, reference_efast, reference_key,
    reference_mvmsl, reports_to_json, run_comparison, stage_seed, summarize, write_rank_tables,
)
from .core import BoxDomain, EvaluationLog, SurrosensError, builtin, external
from .efast import write_indices
from .mvmsl import mvmsl, surrogate_target, write_aggregates, write_effects
from .optimizer import OptimizerConfig, optimize
from .surrogate import fit_kriging, fit_rbf, load_model, save_model

logger = logging.getLogger("surrosens")

LOG_FILE = "log.csv"
STOCHASTIC = {"optimize", "design", "efast"}


@dataclass
class RunConfig:
    command: str
    problem: str | None = None
    external: str | None = None
    dim: int | None = None
    lower: list | None = None
    upper: list | None = None
    timeout: float = 60.0
    mode: str = "efast"
    n_opt: int | None = None
    n_ext: int = 0
    rho: list = field(default_factory=lambda: [0.2])
    surrogate: str = "rbf"
    oo_counts: list | None = None
    seeds: int | None = None
    seed: int | None = None
    out_dir: str = "out"
    per_factor: int = 10_000
    kriging_starts: int = 20
    kriging_max_evals: int | None = None

    def __post_init__(self):
        if (self.problem is None) == (self.external is None):
            raise ValueError("give exactly one of --problem or --external")
        if self.external is not None and self.dim is None:
            raise ValueError("--external needs --dim")
        for name in ("n_opt", "seeds", "per_factor", "kriging_starts", "kriging_max_evals"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"--{name.replace('_', '-')} must be positive")
        if self.n_ext < 0:
            raise ValueError("--n-ext must be nonnegative")
        if any(not 0.0 < r < 1.0 for r in self.rho):
            raise ValueError("--rho values must lie in (0, 1)")
        if self.oo_counts is not None and len(self.oo_counts) != 3:
            raise ValueError("--oo-counts takes three integers")

    @property
    def kinds(self) -> tuple[str, ...]:
        return ("rbf", "kriging") if self.surrogate == "both" else (self.surrogate,)

    @property
    def kriging_opts(self) -> dict:
        opts = {"starts": self.kriging_starts}
        if self.kriging_max_evals is not None:
            opts["max_evals"] = self.kriging_max_evals
        return opts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surrosens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("problem")
    g.add_argument("--problem", help="builtin name, e.g. testproblem1, interaction20, sphere5")
    g.add_argument("--external", help="simulator command speaking the line protocol")
    g.add_argument("--dim", type=int)
    g.add_argument("--lower", type=float, nargs="+", help="one value or one per coordinate")
    g.add_argument("--upper", type=float, nargs="+")
    g.add_argument("--timeout", type=float)
    common.add_argument("--config", help="JSON file with flat keys named like the flags")
    common.add_argument("--out-dir")
    common.add_argument("--seed", type=int)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("optimize", "run the optimizer and record its trace")
    p.add_argument("--n-opt", type=int)

    p = add("design", "extend the trace with LHD (efast) or OO (mvmsl) points")
    p.add_argument("--mode", choices=("efast", "mvmsl"))
    p.add_argument("--n-ext", type=int)
    p.add_argument("--rho", type=float, nargs="+")
    p.add_argument("--oo-counts", type=int, nargs=3)

    p = add("fit", "fit surrogate(s) to the evaluation log")
    p.add_argument("--surrogate", choices=("rbf", "kriging", "both"))
    p.add_argument("--kriging-starts", type=int)
    p.add_argument("--kriging-max-evals", type=int)

    p = add("efast", "Extended FAST on fitted surrogate(s)")
    p.add_argument("--surrogate", choices=("rbf", "kriging", "both"))
    p.add_argument("--per-factor", type=int)

    p = add("mvmsl", "MVMSL on fitted surrogate(s) at the best traced point")
    p.add_argument("--surrogate", choices=("rbf", "kriging", "both"))
    p.add_argument("--rho", type=float, nargs="+")

    p = add("compare", "seeded O3AED / LHD / DIRECT comparison against the reference")
    p.add_argument("--mode", choices=("efast", "mvmsl"))
    p.add_argument("--n-opt", type=int)
    p.add_argument("--n-ext", type=int)
    p.add_argument("--seeds", type=int, help="run seeds 0..SEEDS-1")
    p.add_argument("--surrogate", choices=("rbf", "kriging", "both"))
    p.add_argument("--rho", type=float, nargs="+")
    p.add_argument("--oo-counts", type=int, nargs=3)
    p.add_argument("--per-factor", type=int)
    p.add_argument("--kriging-starts", type=int)
    p.add_argument("--kriging-max-evals", type=int)

    p = add("reference", "gold-standard indices on the true function (cached)")
    p.add_argument("--mode", choices=("efast", "mvmsl"))
    p.add_argument("--rho", type=float, nargs="+")
    p.add_argument("--per-factor", type=int)
    return parser


def resolve_config(parser: argparse.ArgumentParser, argv) -> tuple[RunConfig, bool]:
    """Merge the optional JSON config with the flags; flags win.

    Returns the config and the verbosity flag.
    """
    ns = parser.parse_args(argv)
    values: dict = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {ns.config}: {exc}")
        if not isinstance(raw, dict):
            parser.error("config file must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in raw.items()}
    for k, v in vars(ns).items():
        if v is not None and k not in ("config", "verbose"):
            values[k] = v
    for k in ("rho", "lower", "upper"):
        if k in values and not isinstance(values[k], list):
            values[k] = [values[k]]
    known = set(RunConfig.__dataclass_fields__)
    unknown = sorted(set(values) - known)
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**values)
    except (TypeError, ValueError) as exc:
        parser.error(str(exc))
    needs_seed = cfg.command in STOCHASTIC or (cfg.command == "fit" and "kriging" in cfg.kinds)
    if needs_seed and cfg.seed is None:
        parser.error(f"{cfg.command} is stochastic and requires --seed")
    if cfg.command in ("optimize", "compare") and cfg.n_opt is None:
        parser.error(f"{cfg.command} requires --n-opt")
    if cfg.command == "compare" and cfg.seeds is None:
        parser.error("compare requires --seeds")
    return cfg, ns.verbose


def make_blackbox(cfg: RunConfig):
    if cfg.problem is not None:
        return builtin(cfg.problem)
    n = cfg.dim
    lower = np.broadcast_to(np.asarray(cfg.lower or [0.0], dtype=float), (n,)).copy()
    upper = np.broadcast_to(np.asarray(cfg.upper or [1.0], dtype=float), (n,)).copy()
    return external(cfg.external, n, BoxDomain(lower, upper), cfg.timeout)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, out: Path, files: list[Path]) -> Path:
    manifest = {
        "config": {k: v for k, v in asdict(cfg).items() if k != "out_dir"},
        "versions": {"surrosens": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "files": {p.name: _sha256(p) for p in sorted(set(files))},
    }
    path = out / f"manifest_{cfg.command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _load_log(out: Path, bb) -> EvaluationLog:
    path = out / LOG_FILE
    if not path.exists():
        raise SurrosensError(f"{path} not found; run 'optimize' first")
    return EvaluationLog.from_csv(path, bb.domain)


def _fit(kind: str, log: EvaluationLog, cfg: RunConfig):
    if kind == "rbf":
        return fit_rbf(log.unit_points(), log.values())
    return fit_kriging(log.unit_points(), log.values(), seed=stage_seed(cfg.seed, "kriging"),
                       **cfg.kriging_opts)


def run(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bb = make_blackbox(cfg)
    files: list[Path] = []
    try:
        if cfg.command == "optimize":
            log = EvaluationLog(bb.domain)
            res = optimize(bb, OptimizerConfig(cfg.n_opt, bb.dim, seed=stage_seed(cfg.seed, "opt")), log)
            log.to_csv(out / LOG_FILE)
            (out / "optimum.json").write_text(json.dumps(
                {"x_star": res.x_star.tolist(), "f_star": res.f_star}, indent=1, sort_keys=True) + "\n")
            files += [out / LOG_FILE, out / "optimum.json"]
            print(f"f* = {res.f_star:.10g} after {len(log)} evaluations")
        elif cfg.command == "design":
            log = _load_log(out, bb)
            added = extend_design(bb, log, cfg.mode, cfg.seed, cfg.n_ext, cfg.rho[0],
                                  cfg.oo_counts)
            log.to_csv(out / LOG_FILE)
            files.append(out / LOG_FILE)
            print(f"added {added} design points ({len(log)} total)")
        elif cfg.command == "fit":
            log = _load_log(out, bb)
            for kind in cfg.kinds:
                path = out / f"model_{kind}.json"
                save_model(path, _fit(kind, log, cfg), bb.domain)
                files.append(path)
                print(f"wrote {path}")
        elif cfg.command == "efast":
            for kind in cfg.kinds:
                model, dom = load_model(out / f"model_{kind}.json")
                ind = efast_on_model(model, dom, cfg.seed, cfg.per_factor)
                csv_path, json_path = out / f"efast_{kind}.csv", out / f"efast_{kind}.json"
                write_indices(ind, csv_path, json_path, {"surrogate": kind, "seed": cfg.seed})
                files += [csv_path, json_path]
                print(f"{kind}: ST = {np.round(ind.ST, 4).tolist()}")
        elif cfg.command == "mvmsl":
            xbar, _ = best_point(_load_log(out, bb))
            for kind in cfg.kinds:
                model, dom = load_model(out / f"model_{kind}.json")
                for rho in cfg.rho:
                    res = mvmsl(surrogate_target(model, dom), dom, xbar, rho)
                    stem = f"mvmsl_{kind}_rho{rho:g}"
                    write_effects(res.effects, out / f"{stem}_effects.csv")
                    write_aggregates(res, out / f"{stem}_aggregates.csv")
                    files += [out / f"{stem}_effects.csv", out / f"{stem}_aggregates.csv"]
                    print(f"{kind} rho={rho:g}: SI1 = {np.round(res.local.SI1, 4).tolist()}")
        elif cfg.command == "compare":
            files += _compare(cfg, bb, out)
        elif cfg.command == "reference":
            files += _reference(cfg, bb, out)
    finally:
        bb.close()
    files.append(write_manifest(cfg, out, files))
    return files


def _compare(cfg: RunConfig, bb, out: Path) -> list[Path]:
    files = []
    for rho in (cfg.rho if cfg.mode == "mvmsl" else cfg.rho[:1]):
        reports = run_comparison(
            bb, cfg.mode, cfg.n_opt, cfg.n_ext, seeds=range(cfg.seeds), surrogates=cfg.kinds,
            rho=rho, oo_counts=cfg.oo_counts, cache_dir=out / "cache",
            kriging_opts=cfg.kriging_opts, surrogate_per_factor=cfg.per_factor)
        meta = {k: v for k, v in asdict(cfg).items() if k not in ("out_dir", "command")}
        meta["rho"] = rho if cfg.mode == "mvmsl" else None
        meta["summary"] = summarize(reports)
        if cfg.mode == "efast":
            meta["reference_key"] = reference_key(bb, 0, REF_PER_FACTOR)
        tag = f"_rho{rho:g}" if cfg.mode == "mvmsl" else ""
        sub = out / f"ranks{tag}"
        sub.mkdir(exist_ok=True)
        families = ("ST", "S") if cfg.mode == "efast" else ("SI1", "SI2", "SI3", "E1", "E2")
        files += write_rank_tables(reports, sub, families)
        path = out / f"report{tag}.json"
        path.write_text(reports_to_json(reports, meta))
        files.append(path)
        for method, fams in meta["summary"].items():
            print(method, " ".join(f"{f}={v:.4f}" for f, v in fams.items()))
    return files


def _reference(cfg: RunConfig, bb, out: Path) -> list[Path]:
    seed = 0 if cfg.seed is None else cfg.seed
    if cfg.mode == "efast":
        log = EvaluationLog(bb.domain)
        ind = reference_efast(bb, seed=seed, per_factor=cfg.per_factor, log=log,
                              cache_dir=out / "cache")
        print(f"reference: {len(log)} new evaluations" if len(log) else "reference: cache hit")
        path = out / "reference_efast.csv"
        write_indices(ind, path)
        print(f"ST = {np.round(ind.ST, 3).tolist()}")
        return [path]
    xbar, _ = best_point(_load_log(out, bb))
    files = []
    for rho in cfg.rho:
        res = reference_mvmsl(bb, xbar, rho)
        stem = f"reference_mvmsl_rho{rho:g}"
        write_effects(res.effects, out / f"{stem}_effects.csv")
        write_aggregates(res, out / f"{stem}_aggregates.csv")
        files += [out / f"{stem}_effects.csv", out / f"{stem}_aggregates.csv"]
    return files


def main(argv=None) -> int:
    parser = build_parser()
    try:
        cfg, verbose = resolve_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(cfg)
    except (SurrosensError, OSError, ValueError) as exc:
        print(f"surrosens {cfg.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
