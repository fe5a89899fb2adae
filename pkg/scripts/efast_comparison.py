"""Seeded eFAST comparison: O3AED vs maximin LHD vs direct sampling.

    python3 scripts/efast_comparison.py --problem testproblem1 --n-opt 100 --seeds 10
"""

import argparse
from pathlib import Path

import numpy as np

from surrosens.bench import reports_to_json, run_comparison, summarize, write_rank_tables


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="testproblem1")
    ap.add_argument("--n-opt", type=int, default=100)
    ap.add_argument("--n-ext", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--surrogate", choices=("rbf", "kriging", "both"), default="rbf")
    ap.add_argument("--out-dir", default="out/efast_comparison")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = ("rbf", "kriging") if args.surrogate == "both" else (args.surrogate,)
    reports = run_comparison(args.problem, "efast", args.n_opt, args.n_ext, seeds=args.seeds,
                             surrogates=kinds, cache_dir=out / "cache")
    (out / "report.json").write_text(reports_to_json(reports, vars(args)))
    write_rank_tables(reports, out / "ranks", ("ST", "S"))

    ref = reports[0].indices
    print("REF ST:", np.round(ref["ST"], 3).tolist())
    for method, fams in summarize(reports).items():
        print(f"{method:14s} median Rel_Err(ST) = {fams['ST']:.4f}  Rel_Err(S) = {fams['S']:.4f}")
    by = {}
    for r in reports[1:]:
        by.setdefault(r.method, {})[r.seed] = r.rel_err["ST"]
    o3 = by["O3AED_RBF"] if "O3AED_RBF" in by else by["O3AED_Kriging"]
    for other in sorted(set(by) - {"O3AED_RBF", "O3AED_Kriging"}):
        wins = sum(o3[s] < by[other][s] for s in o3)
        print(f"O3AED wins vs {other}: {wins}/{len(o3)}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
