import csv
import subprocess
import sys

import pytest

from mtlsi import cli
from mtlsi.pipeline import ModelConfig

SMALL_CFG = "image_size = 16,16\nd = 8\nheads = 2\ntokens = 4\nwindow = 2,2\nbackbone_width = 4\n"


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CFG)
    return path


def read_trace(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_verify_single_group(capsys):
    assert cli.main(["verify", "--only", "linear-attn", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "[linear-attn]" in out and "[cwib]" not in out and "FAIL" not in out


def test_verify_fault_fails(capsys):
    assert cli.main(["verify", "--only", "linear-attn", "--fault", "swap-qk"]) != 0
    captured = capsys.readouterr()
    assert "FAIL  [linear-attn] oracle equivalence 64-bit" in captured.out
    assert "oracle equivalence" in captured.err


def test_verify_no_mask_fault_caught(capsys):
    assert cli.main(["verify", "--only", "cwib", "--fault", "no-mask"]) != 0


def test_unknown_fault_rejected():
    with pytest.raises(SystemExit):
        cli.main(["verify", "--fault", "nonsense"])


def test_seed_from_environment(monkeypatch, tmp_path, cfg_path):
    monkeypatch.setenv("MTLSI_SEED", "7")
    assert cli.main(["train", "--config", str(cfg_path), "--steps", "1", "--out", str(tmp_path / "a")]) == 0
    from mtlsi.pipeline import load_checkpoint

    assert load_checkpoint(tmp_path / "a" / "checkpoint.mtls").config.seed == 7


def test_train_writes_outputs_and_resumes(tmp_path, cfg_path):
    args = ["train", "--config", str(cfg_path), "--steps", "6", "--samples", "3"]
    assert cli.main(args + ["--out", str(tmp_path / "full")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "head"), "--stop-at", "2"]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "tail"),
                            "--resume", str(tmp_path / "head" / "checkpoint.mtls")]) == 0
    full = read_trace(tmp_path / "full" / "loss.csv")
    head = read_trace(tmp_path / "head" / "loss.csv")
    tail = read_trace(tmp_path / "tail" / "loss.csv")
    assert full[0] == ["step", "coarse_loss", "refined_loss", "total_loss"]
    assert head[1:] + tail[1:] == full[1:]
    assert (tmp_path / "full" / "checkpoint.mtls").read_bytes() == (tmp_path / "tail" / "checkpoint.mtls").read_bytes()


def test_train_zero_lr_flat(tmp_path, cfg_path):
    assert cli.main(["train", "--config", str(cfg_path), "--steps", "3", "--lr", "0", "--overfit", "1",
                     "--out", str(tmp_path)]) == 0
    rows = read_trace(tmp_path / "loss.csv")[1:]
    assert len({r[1] for r in rows}) == 1 and len({r[2] for r in rows}) == 1


def test_train_divergence_exit_code(tmp_path, cfg_path, capsys):
    code = cli.main(["train", "--config", str(cfg_path), "--steps", "5", "--lr", "1e12", "--overfit", "1",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_DIVERGED
    assert "diverged at step" in capsys.readouterr().err


def test_bad_config_reports_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) != 0
    assert "unknown key" in capsys.readouterr().err


def test_bench_writes_csv(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "--sizes", "64,256", "--repeats", "5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "mechanism,N,d,repeats,median_s,macs" and lines[-1].startswith("# loglog_exponent")
    assert len(lines) == 1 + 6 + 1


def test_bench_unwritable_path(tmp_path):
    assert cli.main(["bench", "--sizes", "64,256", "--out", str(tmp_path / "no" / "b.csv")]) != 0


def test_bench_rejects_descending_sizes(tmp_path, capsys):
    assert cli.main(["bench", "--sizes", "256,64", "--out", str(tmp_path / "b.csv")]) != 0
    assert "ascending" in capsys.readouterr().err


def test_ablate_csv(tmp_path, cfg_path):
    out = tmp_path / "a.csv"
    assert cli.main(["ablate", "--axis", "scales", "--config", str(cfg_path), "--steps", "1",
                     "--samples", "2", "--eval-samples", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("axis,setting,seed,steps,loss_segmentation")
    assert len(lines) == 1 + 4 + 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mtlsi", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("verify", "bench", "train", "ablate"):
        assert cmd in res.stdout


def test_config_text_is_the_cli_format(cfg_path):
    assert ModelConfig.load(cfg_path).d == 8


def test_verify_full_suite_passes(capsys):
    assert cli.main(["verify", "--seed", "42"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    for group in ("numerics", "linear-attn", "mtmqlfb", "distiller", "cwib", "gradcheck", "pipeline"):
        assert f"[{group}]" in out
