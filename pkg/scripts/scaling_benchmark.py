"""Time linear fusion, CWIB and softmax MHSA across token counts and fit log-log slopes.

    python scripts/scaling_benchmark.py --out results/bench.csv
"""
import argparse
from pathlib import Path

from mtlsi import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,4096,16384")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--precision", choices=("f32", "f64"), default="f32")
    ap.add_argument("--out", type=Path, default=Path("results/bench.csv"))
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    records = bench.run_bench(sizes, args.repeats, threads=args.threads, prec=args.precision)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    exps = bench.write_csv(args.out, records)

    print(f"{'mechanism':<20}" + "".join(f"{n:>12}" for n in sizes) + f"{'slope':>8}")
    for mech in bench.MECHANISMS:
        times = [r.median_s for r in records if r.mechanism == mech]
        print(f"{mech:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + f"{exps[mech]:>8.2f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
