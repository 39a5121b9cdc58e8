import json

import pytest

from tshn.cli import main, parse_classes, parse_mvs, resolve_seed, UsageError

TINY_TRAIN = {"episodes": 10, "warmup": 2, "proto_interval": 2, "untrusted_per_episode": 8, "shots": 1,
              "queries": 1, "epochs": 1, "glc_probe_epochs": 1, "log_every": 5, "batch_size": 32}

pytestmark = pytest.mark.filterwarnings("ignore::tshn.errors.ShotsReduced")


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "nested" / "data"
    assert main(["synth", "--classes", "BPSK,QPSK,QAM16", "--per-class", "20", "--snrs", "10,18",
                 "--seed", "7", "-o", str(out)]) == 0
    return out


@pytest.fixture
def config(tmp_path, data_dir):
    def write(**sections):
        doc = {"data": {"path": str(data_dir)}, "train": TINY_TRAIN, **sections}
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(doc))
        return str(p)
    return write


def test_synth_writes_dataset(data_dir, capsys):
    assert (data_dir / "dataset.sig").exists() and (data_dir / "manifest.json").exists()
    man = json.loads((data_dir / "manifest.json").read_text())
    assert man["n_records"] == 120 and man["seed"] == 7


def test_synth_bad_class(tmp_path, capsys):
    assert main(["synth", "--classes", "BPSK,OOK", "-o", str(tmp_path)]) == 2
    assert "OOK" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert main(["train", "--method", "svm"]) == 2
    assert main([]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"episodez": 3}}))
    assert main(["--config", str(bad), "train"]) == 2
    assert "episodez" in capsys.readouterr().err
    bad.write_text(json.dumps({"extras": {}}))
    assert main(["--config", str(bad), "train"]) == 2


def test_train_run_dir_and_determinism(config, tmp_path):
    cfg = config()
    argv = ["--config", cfg, "train", "--method", "tshn", "--noise", "sym:0.5", "--trusted-frac", "0.1",
            "--seed", "1", "--runs-dir", str(tmp_path / "runs")]
    assert main(argv + ["--name", "a"]) == 0
    assert main(argv + ["--name", "b"]) == 0
    a, b = tmp_path / "runs" / "a", tmp_path / "runs" / "b"
    for f in ("config.json", "metrics.jsonl", "transition.csv", "report.json", "report.csv", "ckpt/final.ckpt"):
        assert (a / f).exists(), f
    assert (a / "metrics.jsonl").read_text().strip()
    assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    snap = json.loads((a / "config.json").read_text())
    assert snap["run"]["seed"] == 1 and snap["train"]["episodes"] == 10


def test_flags_override_config(config, tmp_path):
    cfg = config(run={"method": "ce", "noise": "sym:0.2", "trusted_fraction": 0.1})
    assert main(["--config", cfg, "train", "--method", "mae", "--runs-dir", str(tmp_path), "--name", "r"]) == 0
    snap = json.loads((tmp_path / "r" / "config.json").read_text())
    assert snap["run"]["method"] == "mae" and snap["run"]["noise"] == "sym:0.2"


def test_seed_env_fallback(config, tmp_path, monkeypatch):
    monkeypatch.setenv("TSHN_SEED", "5")
    assert main(["--config", config(), "train", "--method", "ce", "--trusted-frac", "0.1",
                 "--runs-dir", str(tmp_path)]) == 0
    assert (tmp_path / "ce_symmetric0_s5").is_dir()
    assert resolve_seed(3, {"seed": 4}) == 3 and resolve_seed(None, {"seed": 4}) == 4
    monkeypatch.delenv("TSHN_SEED")
    assert resolve_seed(None, {}) == 0


def test_glc_without_trusted(config, tmp_path, capsys):
    assert main(["--config", config(), "train", "--method", "glc", "--trusted-frac", "0",
                 "--runs-dir", str(tmp_path)]) == 2
    assert "InsufficientTrusted" in capsys.readouterr().err


def test_mvs_flag(config, tmp_path):
    assert main(["--config", config(), "train", "--method", "tshn", "--trusted-frac", "0.1", "--noise",
                 "flip:QAM16-QPSK:0.3", "--mvs", "N=4,views=2", "--runs-dir", str(tmp_path), "--name", "m"]) == 0
    snap = json.loads((tmp_path / "m" / "config.json").read_text())
    assert snap["mvs"]["n_segments"] == 4 and snap["mvs"]["views_per_sample"] == 2


def test_sweep_table_and_resume(config, tmp_path, capsys):
    out = tmp_path / "sw"
    argv = ["--config", config(), "sweep", "--rates", "0,0.5", "--methods", "tshn,ce", "--seeds", "0",
            "--trusted-frac", "0.1", "--out", str(out), "--emit-table1"]
    assert main(argv) == 0
    printed = capsys.readouterr().out
    assert "TSHN(↑)" in printed and (out / "table1.txt").exists()
    assert len((out / "report.csv").read_text().splitlines()) == 5
    assert main(argv) == 0
    assert len((out / "report.csv").read_text().splitlines()) == 5


def test_sweep_all_failed_exits_1(config, tmp_path):
    assert main(["--config", config(), "sweep", "--rates", "0.2", "--methods", "tshn", "--seeds", "0",
                 "--trusted-frac", "0", "--out", str(tmp_path / "f")]) == 1


def test_parsers():
    assert len(parse_classes("11")) == 11 and len(parse_classes(8)) == 8
    with pytest.raises(UsageError):
        parse_classes("5")
    assert parse_mvs("N=4,views=20") == {"n_segments": 4, "views_per_sample": 20}
    with pytest.raises(UsageError):
        parse_mvs("k=3")
