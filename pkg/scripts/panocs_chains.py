"""Exact selection probabilities on k-chains for every engine, against their bounds."""
import argparse
import time

from panorama_adwords.panocs import VARIANTS, chain, enumerate_exact, make_engine


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kmax", type=int, default=6, help="longest chain")
    ap.add_argument("--general-kmax", type=int, default=4, help="partition bound for the general engine")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    args = ap.parse_args()
    print(f"{'variant':<12}{'k':>3}  {'P[selected]':>12}  {'bound':>12}  {'ok':<3} {'secs':>6}")
    for v in args.variants:
        eng = make_engine(v, kmax=args.general_kmax)
        for k in range(1, args.kmax + 1):
            t0 = time.perf_counter()
            res = enumerate_exact(v, chain(k), ("a", 0), kmax=args.general_kmax)
            b = eng.bound(k)
            print(f"{v:<12}{k:>3}  {float(res.probability):>12.8f}  {float(b):>12.8f}  "
                  f"{'yes' if res.probability >= b else 'NO':<3} {time.perf_counter() - t0:>6.2f}")


if __name__ == "__main__":
    main()
