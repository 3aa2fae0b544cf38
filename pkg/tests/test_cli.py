import subprocess
import sys

import numpy as np
import pytest

from rescom.cli import main
from rescom.config import ConfigError, load_config
from rescom.model import load_checkpoint

FAST = ["--set", "epochs=2", "--set", "hidden=16", "--set", "proj_hidden=16", "--set", "proj_dim=8",
        "--set", "n_classes=4", "--set", "dim=6", "--set", "n_max=60", "--set", "imbalance_factor=10",
        "--set", "test_per_class=10", "--set", "queue.size=4", "--set", "batch_size=32"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--out", str(out), *FAST]) == 0
    return out


@pytest.mark.parametrize("cmd", ["simulate", "grad-check", "train", "eval", "profile-gradients", "gen-data"])
def test_subcommand_help(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main([cmd, "--help"])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rescom", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_simulate_stdout(capsys):
    assert main(["simulate", "--counts", "40,20,5", "--batch", "8", "--epochs", "5",
                 "--queue-size", "12"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("class,0,1,2\n")
    assert "gamma: 64.000000" in out and "gamma_simulated:" in out


def test_simulate_files(tmp_path, capsys):
    out = tmp_path / "pairs.csv"
    assert main(["simulate", "--k", "5", "--if", "10", "--nmax", "100", "--batch", "16",
                 "--epochs", "3", "--queue-size", "50", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "class,0,1,2,3,4"
    assert (tmp_path / "pairs.expected.csv").exists()


def test_simulate_invalid_profile(capsys):
    assert main(["simulate", "--counts", "5,0"]) == 2
    assert main(["simulate", "--k", "3"]) == 2
    assert main(["simulate", "--counts", "5,3", "--batch", "100"]) == 2
    assert "error" in capsys.readouterr().err


def test_grad_check_pass_and_fail(capsys):
    assert main(["grad-check", "--instances", "5", "--network-instances", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == 4
    assert main(["grad-check", "--instances", "5", "--network-instances", "2", "--tolerance", "1e-14"]) == 1
    assert "failing instance: seed=0 index=" in capsys.readouterr().out


def test_train_outputs(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert names == ["checkpoint.rscm", "manifest.ini", "metrics.csv"]
    tensors = load_checkpoint(trained / "checkpoint.rscm")
    assert list(tensors["meta.class_counts"]) == [60, 28, 13, 6]
    manifest = (trained / "manifest.ini").read_text()
    assert "epochs = 2" in manifest and "seed = 0" in manifest and "size = 4" in manifest
    assert len((trained / "metrics.csv").read_text().splitlines()) == 3


def test_train_is_reproducible(trained, tmp_path):
    assert main(["train", "--out", str(tmp_path), *FAST]) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    assert (tmp_path / "checkpoint.rscm").read_bytes() == (trained / "checkpoint.rscm").read_bytes()


def test_manifest_reloads_to_same_run(trained, tmp_path):
    a = load_config(None, FAST[1::2])
    ini = tmp_path / "m.ini"
    text = (trained / "manifest.ini").read_text().split("[manifest]")[0]
    ini.write_text(text)
    b = load_config(str(ini))
    assert a.to_ini() == b.to_ini()


def test_eval_stdout_and_file(trained, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.rscm"), *FAST]) == 0
    out = capsys.readouterr().out
    assert out.startswith("top1_all: ") and "ece: " in out
    report = tmp_path / "r.txt"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.rscm"), "--out", str(report), *FAST]) == 0
    assert report.read_text() == out


def test_eval_bad_checkpoint(tmp_path, capsys):
    bad = tmp_path / "x.rscm"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(bad)]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.rscm")]) == 1


def test_eval_csv_data(trained, tmp_path):
    data = tmp_path / "test.csv"
    assert main(["gen-data", "--k", "4", "--dim", "6", "--if", "1", "--nmax", "5",
                 "--out", str(data)]) == 0
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.rscm"), "--data", str(data)]) == 0


def test_profile_gradients(trained, tmp_path):
    out = tmp_path / "g.csv"
    assert main(["profile-gradients", "--checkpoint", str(trained / "checkpoint.rscm"),
                 "--queries", "20", "--out", str(out), *FAST]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "rank,polarity,similarity,grad_norm"
    assert len(lines) == 1 + 4 * 4


def test_gen_data(tmp_path, capsys):
    out, test_out = tmp_path / "tr.csv", tmp_path / "te.csv"
    assert main(["gen-data", "--k", "3", "--dim", "2", "--if", "10", "--nmax", "30",
                 "--out", str(out), "--test-out", str(test_out), "--test-per-class", "4"]) == 0
    assert len(out.read_text().splitlines()) == 1 + 30 + 9 + 3
    assert len(test_out.read_text().splitlines()) == 13


def test_bad_config_key_is_usage_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--set", "nonsense=1"]) == 2
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nwarp = 9\n")
    assert main(["train", "--out", str(tmp_path), "--config", str(cfg)]) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nepochs = 7\nlambda = 0.3\n[contrastive]\nqp = 4\nqn = all\n")
    run = load_config(str(cfg), ["train.epochs=9"])
    assert run.train.epochs == 9 and run.train.lam == 0.3
    assert run.train.qp == 4 and run.train.qn is None
    assert load_config(None, ["lam=0.1"]).train.lam == 0.1
    with pytest.raises(ConfigError):
        load_config(None, ["epochs=many"])
    with pytest.raises(ConfigError):
        load_config(None, ["epochs"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_csv_training_config(tmp_path):
    data = tmp_path / "tr.csv"
    main(["gen-data", "--k", "3", "--dim", "4", "--if", "5", "--nmax", "30", "--out", str(data)])
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), "--set", "source=csv", "--set", f"path={data}",
                 "--set", "epochs=1", "--set", "size=4"]) == 0
    t = load_checkpoint(out / "checkpoint.rscm")
    np.testing.assert_array_equal(t["meta.class_counts"], [30, 13, 6])


def test_config_inline_comments(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nvariant = siambs   ; two-view only\n[queue]\nsize = 8  # per class\n")
    run = load_config(str(cfg))
    assert run.train.variant == "siambs" and run.train.queue_size == 8


def test_explicit_counts_config(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--out", str(out), "--set", "counts=30,12,3", "--set", "epochs=1",
                 "--set", "size=2", "--set", "test_per_class=5"]) == 0
    t = load_checkpoint(out / "checkpoint.rscm")
    np.testing.assert_array_equal(t["meta.class_counts"], [30, 12, 3])
    assert "counts = 30,12,3" in (out / "manifest.ini").read_text()
