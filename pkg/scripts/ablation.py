"""Run both ablation sweeps (token count and query-scale set) and print side-by-side tables.

    python scripts/ablation.py --steps 60 --out-dir results
"""
import argparse
from pathlib import Path

from mtlsi import ablate
from mtlsi.numerics import precision
from mtlsi.pipeline import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=("tokens", "scales", "both"), default="both")
    ap.add_argument("--config", type=Path)
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--train", type=int, default=8)
    ap.add_argument("--eval", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    args = ap.parse_args()

    base = ModelConfig.load(args.config) if args.config else ModelConfig()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    axes = ("tokens", "scales") if args.axis == "both" else (args.axis,)
    for axis in axes:
        with precision(base.precision):
            rows, extra = ablate.run_ablation(axis, base, args.steps, args.train, args.eval, args.seed)
        path = args.out_dir / f"ablate_{axis}.csv"
        ablate.write_csv(path, rows, extra)
        tasks = list(rows[0].losses)
        print(f"\n{axis} ({args.steps} steps, seed {args.seed})")
        print(f"{'setting':<10}" + "".join(f"{t:>14}" for t in tasks) + f"{'total':>10}")
        for r in rows:
            print(f"{r.setting:<10}" + "".join(f"{r.losses[t]:>14.4f}" for t in tasks) + f"{r.total:>10.4f}")
        for k, v in extra.items():
            print(f"{k}: {v:.3e}")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
