"""Empirical ratio of every allocator over seeded instances of each family.

Rows go to a CSV report (same schema as `panorama-adwords run --report`).
"""
import argparse
import warnings

from panorama_adwords.allocators import ALGOS, run
from panorama_adwords.evaluation import (append_report, estimate_ratio, format_rows, guarantee_for,
                                         offline_opt, report_row)
from panorama_adwords.instance import FAMILIES, generate_instance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--instances", type=int, default=5)
    ap.add_argument("--advertisers", type=int, default=3)
    ap.add_argument("--impressions", type=int, default=8)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--report", default="ratio_sweep.csv")
    args = ap.parse_args()
    warnings.simplefilter("ignore", UserWarning)

    rows = []
    for family in FAMILIES:
        for j in range(args.instances):
            inst = generate_instance(family, args.advertisers, args.impressions, args.seed + j)
            opt = offline_opt(inst)
            for algo in ALGOS:
                est = estimate_ratio(inst, algo, args.trials, args.seed, opt=opt)
                g = guarantee_for(algo, run(algo, inst, args.seed), inst)
                rows.append(report_row(f"{family}#{args.seed + j}", est, "default", g,
                                       sum(a.budget for a in inst.advertisers)))
    append_report(args.report, rows)
    print(format_rows(rows), end="")


if __name__ == "__main__":
    main()
