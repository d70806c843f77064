import numpy as np
import pytest

from mtlsi import bench


def test_grid_for():
    assert bench.grid_for(256) == (16, 16)
    assert bench.grid_for(1024) == (32, 32)
    h, w = bench.grid_for(96)
    assert h * w == 96 and h % 2 == 0 and w % 2 == 0
    with pytest.raises(ValueError):
        bench.grid_for(7)


def test_fit_exponent_recovers_power_law():
    ns = np.array([256, 1024, 4096])
    assert bench.fit_exponent(ns, 3e-9 * ns ** 1.5) == pytest.approx(1.5)


def test_time_call_needs_five_repeats():
    with pytest.raises(ValueError):
        bench.time_call(lambda: None, 4)
    calls = []
    bench.time_call(lambda: calls.append(1), 5)
    assert len(calls) == 6  # warm-up discarded


def test_sizes_must_ascend():
    with pytest.raises(ValueError):
        bench.run_bench([1024, 256])


def test_csv_schema_and_roundtrip(tmp_path):
    recs = bench.run_bench([64, 256], repeats=5, settings=bench.BenchSettings(d=8, window=(4, 4)))
    assert [r.mechanism for r in recs] == ["linear"] * 2 + ["quadratic-baseline"] * 2 + ["cwib"] * 2
    path = tmp_path / "b.csv"
    exps = bench.write_csv(path, recs)
    lines = path.read_text().splitlines()
    assert lines[0] == "mechanism,N,d,repeats,median_s,macs"
    assert lines[-1].startswith("# loglog_exponent linear=")
    assert set(exps) == set(bench.MECHANISMS)
    back = bench.read_csv(path)
    assert [(r.mechanism, r.N, r.macs) for r in back] == [(r.mechanism, r.N, r.macs) for r in recs]
    assert all(r.median_s > 0 for r in back)


def test_mac_estimates_scale_as_claimed():
    s = bench.BenchSettings()
    for mech, power in (("linear", 1), ("cwib", 1), ("quadratic-baseline", 2)):
        small, big = bench._macs(mech, 1024, s), bench._macs(mech, 4096, s)
        assert big / small == pytest.approx(4 ** power, rel=0.2)


def test_baseline_chunking_does_not_change_result():
    from mtlsi.numerics import Tensor
    from mtlsi.numerics.nn import Linear

    r = np.random.default_rng(0)
    x = Tensor(r.normal(size=(50, 8)))
    ws = [Linear(8, 8, r, bias=False, dtype=np.float64) for _ in range(3)]
    a = bench.mhsa_baseline(x, *ws, heads=2, chunk=7).data
    b = bench.mhsa_baseline(x, *ws, heads=2, chunk=64).data
    assert np.allclose(a, b, rtol=1e-13)
