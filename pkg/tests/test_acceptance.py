"""Acceptance gate: one PASS/FAIL line per criterion at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from mtlsi import bench, cli, verify
from mtlsi.numerics import precision
from mtlsi.pipeline import ModelConfig, synth_dataset, train

SEED = 42


def line(n: int, ok: bool, title: str, detail: str) -> str:
    return f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


def criterion_1():
    t0 = time.perf_counter()
    with precision("f64"):
        e64 = verify.linear_equivalence(SEED, 100, "f64")
        e32 = verify.linear_equivalence(SEED, 100, "f32")
    dt = time.perf_counter() - t0
    ok = e64 <= 1e-10 and e32 <= 1e-5 and dt < 10
    return ok, "linear-attention oracle equivalence", f"64-bit {e64:.2e} (<=1e-10), 32-bit {e32:.2e} (<=1e-5), {dt:.2f}s (<10s)"


def criterion_2():
    with precision("f64"):
        err = verify.mtmqlfb_equivalence(SEED, configs=((1, 2, 4), (2, 8, 16), (3, 12, 12), (4, 16, 16)))
    return err <= 1e-9, "MT-MQLFB block equivalence", f"worst rel err {err:.2e} over T<=4, H=W<=16 (<=1e-9)"


def criterion_3():
    with precision("f64"):
        ok = verify.context_reuse_identical(SEED)
    return ok, "context reuse over 3 scales", "bitwise identical" if ok else "outputs differ"


def criterion_4():
    t0 = time.perf_counter()
    parts = {}
    with precision("f64"):
        for name, fn in (("MT-MQLFB", verify.gradcheck_mtmqlfb), ("distiller", verify.gradcheck_distiller),
                         ("CWIB", verify.gradcheck_cwib), ("heads", verify.gradcheck_heads)):
            parts[name] = fn(SEED, coords=200, report=True)
    dt = time.perf_counter() - t0
    ok = all(r.max_rel_err <= 1e-4 and r.n_coords >= 200 for r in parts.values()) and dt < 300
    detail = ", ".join(f"{k} {r.max_rel_err:.1e}/{r.n_coords}" for k, r in parts.items())
    return ok, "gradient checks", f"{detail} (<=1e-4, >=200 coords), {dt:.1f}s (<300s)"


def criterion_5():
    t0 = time.perf_counter()
    records = bench.run_bench(bench.DEFAULT_SIZES, repeats=5, threads=1)
    dt = time.perf_counter() - t0
    exps = bench.exponents(records)
    med = {(r.mechanism, r.N): r.median_s for r in records}
    grow = {m: med[(m, 16384)] / med[(m, 4096)] for m in bench.MECHANISMS}
    ok = (exps["linear"] <= 1.3 and exps["cwib"] <= 1.3 and exps["quadratic-baseline"] >= 1.7 and dt < 600)
    detail = (f"exponents linear {exps['linear']:.2f}, cwib {exps['cwib']:.2f} (<=1.3), "
              f"quadratic {exps['quadratic-baseline']:.2f} (>=1.7); 4x tokens: linear x{grow['linear']:.1f}, "
              f"quadratic x{grow['quadratic-baseline']:.1f}; {dt:.0f}s (<600s)")
    return ok, "complexity scaling, single-threaded", detail


def criterion_6():
    with precision("f64"):
        worst, envelope = verify.distiller_structure(SEED, 100)
    return worst <= 1e-6 and envelope, "distiller structure", \
        f"row-sum err {worst:.1e} (<=1e-6), envelope {'holds' if envelope else 'violated'} on 100 instances"


def criterion_7():
    with precision("f64"):
        rt = verify.roundtrip_exact(SEED)
        glob = verify.global_window_error(SEED)
        perm = verify.permutation_error(SEED)
    ok = rt and glob <= 1e-6 and perm <= 1e-5
    return ok, "CWIB structure", f"round trip {'exact' if rt else 'inexact'}, single window vs MHSA {glob:.1e} " \
                                 f"(<=1e-6), joint permutation {perm:.1e} (<=1e-5)"


def criterion_8():
    t0 = time.perf_counter()
    cfg = ModelConfig(image_size=(32, 32), batch_size=1, seed=0).validate()
    data = synth_dataset(0, 1, cfg)
    full = train(cfg, data, 200)
    again = train(cfg, data, 200)
    head = train(cfg, data, 200, stop_at=100)
    tail = train(cfg, data, 200, resume=head.checkpoint)
    dt = time.perf_counter() - t0
    first, last = full.trace[0], full.trace[-1]
    drop = 1 - last[3] / first[3]
    n_tasks = len(cfg.tasks)
    coarse, refined = last[1] / n_tasks, last[2] / n_tasks
    deterministic = full.trace == again.trace
    resumable = head.trace + tail.trace == full.trace and all(
        full.checkpoint.state[k].tobytes() == tail.checkpoint.state[k].tobytes() for k in full.checkpoint.state)
    ok = drop >= 0.5 and refined <= coarse and deterministic and resumable and dt < 600
    detail = (f"total {first[3]:.3f} -> {last[3]:.3f} ({drop:.0%} drop, >=50%), mean refined {refined:.3f} "
              f"<= coarse {coarse:.3f}: {refined <= coarse}, deterministic {deterministic}, "
              f"resume bitwise {resumable}, {dt:.0f}s for 4 runs")
    return ok, "toy overfit run", detail


def criterion_9(tmp):
    from pathlib import Path

    tmp = Path(tmp)
    schema = {}
    for axis, rows in (("tokens", 3), ("scales", 4)):
        out = tmp / f"{axis}.csv"
        code = cli.main(["ablate", "--axis", axis, "--steps", "10", "--samples", "4", "--eval-samples", "2",
                         "--seed", str(SEED), "--out", str(out)])
        lines = out.read_text().splitlines() if out.exists() else []
        body = [ln for ln in lines[1:] if not ln.startswith("#")]
        header_ok = bool(lines) and lines[0] == \
            "axis,setting,seed,steps,loss_segmentation,loss_depth,loss_boundary,total_loss"
        seeds = {ln.split(",")[2] for ln in body}
        schema[axis] = code == 0 and header_ok and len(body) == rows and seeds == {str(SEED)}
        if axis == "scales":
            gap_lines = [ln for ln in lines if ln.startswith("# degeneration_gap")]
            gap = float(gap_lines[0].split("=")[1]) if gap_lines else float("inf")
    with precision("f64"):
        unit_gap = verify.single_scale_gap(SEED)
    ok = all(schema.values()) and gap == 0.0 and unit_gap == 0.0
    detail = (f"tokens CSV {'ok' if schema['tokens'] else 'bad'}, scales CSV {'ok' if schema['scales'] else 'bad'}, "
              f"s=1 vs plain linear attention: trained net gap {gap:.1e}, 64-bit gap {unit_gap:.1e}")
    return ok, "ablation protocols", detail


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


@pytest.fixture
def report(capsys):
    def emit(n, ok, title, detail):
        with capsys.disabled():
            print("\n" + line(n, ok, title, detail), flush=True)
    return emit


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, report, tmp_path):
    fn = CRITERIA[n]
    ok, title, detail = fn(tmp_path) if n == 9 else fn()
    report(n, ok, title, detail)
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    failures = 0
    with tempfile.TemporaryDirectory() as d:
        for n, fn in CRITERIA.items():
            ok, title, detail = fn(d) if n == 9 else fn()
            print(line(n, ok, title, detail), flush=True)
            failures += not ok
    sys.exit(1 if failures else 0)
