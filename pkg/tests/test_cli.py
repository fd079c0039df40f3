import shutil

import numpy as np
import pytest

from ccmpc.cli import main
from ccmpc.predictor import load_dataset


def test_gen_data_split_sizes(tmp_path):
    assert main(["--output", str(tmp_path), "gen-data", "--n", "1000", "--seed", "7"]) == 0
    tr = load_dataset(tmp_path / "data" / "train.npz")
    cal = load_dataset(tmp_path / "data" / "cal.npz")
    assert (len(tr), len(cal)) == (500, 500)


def test_calibrate_without_train_fails_cleanly(tmp_path, capsys):
    assert main(["--output", str(tmp_path), "calibrate"]) == 1
    err = capsys.readouterr().err
    assert "missing artifact" in err and "train" in err


def test_eval_without_artifacts_fails_cleanly(tmp_path, capsys):
    assert main(["--output", str(tmp_path), "eval", "--controller", "scp2", "--episodes", "1"]) == 1
    assert "missing artifact" in capsys.readouterr().err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["eval", "--controller", "nope"])
    assert e.value.code == 2


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("scp:\n  not_a_key: 1\n")
    assert main(["--config", str(cfg), "gen-data"]) == 1
    assert "not_a_key" in capsys.readouterr().err


def test_config_file_sets_output(tmp_path):
    cfg = tmp_path / "c.yaml"
    out = tmp_path / "from_config"
    cfg.write_text(f"output_dir: {out}\ndata:\n  n_records: 40\n")
    assert main(["--config", str(cfg), "gen-data"]) == 0
    assert len(load_dataset(out / "data" / "cal.npz")) == 20


def test_baseline_eval_needs_no_artifacts(tmp_path):
    assert main(["--output", str(tmp_path), "eval", "--controller", "apf", "--episodes", "3"]) == 0
    assert (tmp_path / "eval" / "apf_m1_summary.csv").exists()
    assert (tmp_path / "eval" / "apf_m1_episodes.csv").read_text().count("\n") == 4


def _with_artifacts(desk, dst):
    for sub in ("model", "conformal"):
        shutil.copytree(f"{desk.root}/{sub}", dst / sub)


def test_eval_twice_byte_identical(desk, tmp_path):
    _with_artifacts(desk, tmp_path)
    argv = ["--output", str(tmp_path), "eval", "--controller", "scp2", "--m", "1", "--episodes", "50",
            "--seed", "1"]
    path = tmp_path / "eval" / "scp2_m1_summary.csv"
    assert main(argv) == 0
    first = path.read_bytes()
    path.unlink()
    assert main(argv) == 0
    assert path.read_bytes() == first


def test_replay_reproduces_logged_episode(desk, tmp_path, capsys):
    _with_artifacts(desk, tmp_path)
    assert main(["--output", str(tmp_path), "eval", "--episodes", "2", "--seed", "3", "--logs"]) == 0
    log = tmp_path / "logs" / "scp2_m1_3000001.jsonl"
    assert log.exists()
    saved = tmp_path / "saved.jsonl"
    shutil.copy(log, saved)
    assert main(["--output", str(tmp_path), "replay", "--seed", "3", "--index", "1", "--check", str(saved)]) == 0
    assert "identical" in capsys.readouterr().out
    saved.write_text(saved.read_text().replace('"step": 3,', '"step": 4,', 1))
    assert main(["--output", str(tmp_path), "replay", "--seed", "3", "--index", "1", "--check", str(saved)]) == 1


def test_bench_shortcut_small(desk, tmp_path):
    _with_artifacts(desk, tmp_path)
    assert main(["--output", str(tmp_path), "bench-shortcut", "--m", "1", "--episodes", "2"]) == 0
    rows = (tmp_path / "bench" / "shortcut.csv").read_text().splitlines()
    assert rows[0].startswith("n_pedestrians,") and len(rows) == 2
    vals = dict(zip(rows[0].split(","), rows[1].split(",")))
    assert float(vals["outer_iters_on"]) <= float(vals["outer_iters_off"])
    assert np.isfinite(float(vals["time_on_ms"]))


def test_output_flag_beats_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CCMPC_OUTPUT", str(tmp_path / "env"))
    assert main(["gen-data", "--n", "4"]) == 0
    assert (tmp_path / "env" / "data" / "cal.npz").exists()
    assert main(["--output", str(tmp_path / "flag"), "gen-data", "--n", "4"]) == 0
    assert (tmp_path / "flag" / "data" / "cal.npz").exists()
