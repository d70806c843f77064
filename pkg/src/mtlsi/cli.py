"""``mtlsi`` command line: verify, bench, train, ablate."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import ablate, bench, faults, verify
from .pipeline.config import ModelConfig
from .pipeline.data import synth_dataset
from .pipeline.train import Checkpoint, DivergenceError, train
from .numerics.tensor import precision

EXIT_FAIL = 1
EXIT_DIVERGED = 3


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MTLSI_SEED")
    return int(env) if env else default


def _sizes(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _config(args) -> ModelConfig:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    changes = {"seed": _seed(args, cfg.seed)}
    if args.precision:
        changes["precision"] = args.precision
    if getattr(args, "lr", None) is not None:
        changes["lr"] = args.lr
    return cfg.replace(**changes).validate()


def cmd_verify(args) -> int:
    with faults.inject(args.fault):
        results = verify.run(_seed(args, 42), args.only, out=sys.stdout)
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"failed: [{r.group}] {r.name}", file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_FAIL if failed else 0


def cmd_bench(args) -> int:
    out = Path(args.out or "bench.csv")
    if not out.parent.exists():
        print(f"cannot write {out}: no such directory", file=sys.stderr)
        return EXIT_FAIL
    settings = bench.BenchSettings(seed=_seed(args))
    records = bench.run_bench(args.sizes, args.repeats, args.mechanisms, settings,
                              threads=args.threads, prec=args.precision or "f32")
    exps = bench.write_csv(out, records)
    for mech, e in exps.items():
        print(f"{mech}: log-log exponent {e:.3f}")
    return 0


def cmd_train(args) -> int:
    resume = Checkpoint.load(args.resume) if args.resume else None
    cfg = resume.config if resume and not args.config else _config(args)
    if args.overfit:
        cfg = cfg.replace(batch_size=args.overfit)
    data = synth_dataset(cfg.seed, args.overfit or args.samples, cfg)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    try:
        with precision(cfg.precision):
            result = train(cfg, data, args.steps, resume=resume, stop_at=args.stop_at)
    except DivergenceError as exc:
        print(f"diverged at step {exc.step}", file=sys.stderr)
        return EXIT_DIVERGED
    result.checkpoint.save(out / "checkpoint.mtls")
    result.write_trace(out / "loss.csv")
    if result.trace:
        first, last = result.trace[0][3], result.trace[-1][3]
        print(f"steps {result.trace[0][0]}..{result.trace[-1][0]}: total loss {first:.4f} -> {last:.4f}")
    return 0


def cmd_ablate(args) -> int:
    base = _config(args)
    rows, extra = ablate.run_ablation(args.axis, base, args.steps, args.samples, args.eval_samples,
                                      base.seed)
    out = Path(args.out or f"ablate_{args.axis}.csv")
    ablate.write_csv(out, rows, extra)
    for r in rows:
        print(f"{r.setting}: total {r.total:.4f}")
    for k, v in extra.items():
        print(f"{k}: {v:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="defaults to $MTLSI_SEED")
    common.add_argument("--precision", choices=("f32", "f64"), default=None)
    common.add_argument("--out", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mtlsi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    p.add_argument("--only", action="append", choices=verify.groups(), help="repeatable")
    p.add_argument("--fault", choices=sorted(faults.KNOWN), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="time attention mechanisms across N")
    p.add_argument("--sizes", type=_sizes, default=list(bench.DEFAULT_SIZES))
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--mechanisms", type=lambda s: s.split(","), default=list(bench.MECHANISMS))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", parents=[common], help="train on synthetic scenes")
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--overfit", type=int, default=None, metavar="N", help="train on N samples only")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--resume")
    p.add_argument("--stop-at", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", parents=[common], help="token-count or scale-set sweep")
    p.add_argument("--axis", choices=sorted(ablate.AXES), required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--eval-samples", type=int, default=4)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
