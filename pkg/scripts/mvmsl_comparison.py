"""Seeded MVMSL comparison on an objective-oriented vs an equal-size LHD design.

    python3 scripts/mvmsl_comparison.py --problem interaction20 --n-opt 600 --seeds 10 --rho 0.2
"""

import argparse
from pathlib import Path

from surrosens.bench import reports_to_json, run_comparison, summarize, write_rank_tables

FAMILIES = ("SI1", "SI2", "SI3", "E1", "E2")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="interaction20")
    ap.add_argument("--n-opt", type=int, default=600)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--rho", type=float, default=0.2)
    ap.add_argument("--oo-counts", type=int, nargs=3)
    ap.add_argument("--no-kriging", action="store_true", help="skip the O3AED Kriging arm")
    ap.add_argument("--kriging-max-evals", type=int, default=150)
    ap.add_argument("--kriging-starts", type=int, default=10)
    ap.add_argument("--out-dir", default="out/mvmsl_comparison")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = ("rbf",) if args.no_kriging else ("rbf", "kriging")
    reports = run_comparison(args.problem, "mvmsl", args.n_opt, seeds=args.seeds, surrogates=kinds,
                             lhd_surrogates=("rbf",), rho=args.rho, oo_counts=args.oo_counts,
                             kriging_opts={"max_evals": args.kriging_max_evals,
                                           "starts": args.kriging_starts})
    (out / "report.json").write_text(reports_to_json(reports, vars(args)))
    write_rank_tables(reports, out / "ranks", FAMILIES)

    for method, fams in summarize(reports).items():
        print(f"{method:14s} " + " ".join(f"{f}={fams[f]:.4f}" for f in FAMILIES))
    by = {}
    for r in reports:
        if r.method != "REF":
            by.setdefault(r.method, {})[r.seed] = r
    o3, lhd = by["O3AED_RBF"], by["LHD_RBF"]
    for f in FAMILIES:
        wins = sum(o3[s].rel_err[f] < lhd[s].rel_err[f] for s in o3)
        print(f"O3AED_RBF beats LHD_RBF on {f}: {wins}/{len(o3)}")
    if "O3AED_Kriging" in by:
        kri = by["O3AED_Kriging"]
        wins = sum(o3[s].rel_err["SI1"] <= kri[s].rel_err["SI1"] for s in o3)
        print(f"RBF <= Kriging on SI1: {wins}/{len(o3)}")


if __name__ == "__main__":
    main()
