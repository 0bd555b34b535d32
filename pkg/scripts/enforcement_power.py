"""Detection rate and false violations of the conformance check over seeds.

    python3 scripts/enforcement_power.py --seeds 100 --sigma 0 6 --injected 0 10
"""
import argparse

from spectrum_quant import experiments as ex
from spectrum_quant.policy import VIOLATION


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.0, 6.0])
    ap.add_argument("--injected", type=float, nargs="+", default=[0.0, 10.0])
    ap.add_argument("--tolerance", type=float, default=3.0)
    ap.add_argument("--pool", default="knn", choices=["section", "knn", "nearest"])
    args = ap.parse_args()

    print("sigma_db,injected_db,flagged,seeds,false_violations")
    for sigma in args.sigma:
        for inj in args.injected:
            rows = ex.parallel_map(lambda s: ex.enforcement_trial(s, sigma, inj, args.tolerance, pool=args.pool),
                                   range(args.seeds))
            flagged = sum(r.verdict == VIOLATION for r in rows)
            false = sum(r.false_violations for r in rows)
            print(f"{sigma:g},{inj:g},{flagged},{args.seeds},{false}")


if __name__ == "__main__":
    main()
