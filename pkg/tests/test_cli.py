"""CLI: subcommands, config precedence, exit codes, determinism."""

import hashlib
import json

import pytest

from spherepose.cli import main

TINY_TRAIN = [
    "--band-limit", "2", "--channels", "4", "--encoder-channels", "6,8",
    "--proj-recursion", "2", "--n-keep", "16", "--grid-recursion", "1",
    "--filter-grid-recursion", "2", "--batch-size", "16", "--dtype", "float64",
]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Datasets plus one trained tiny checkpoint, built through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--shape", "tetX", "--n", "32", "--seed", "4",
                 "--out", str(root / "train.syml")]) == 0
    assert main(["generate", "--shape", "tetX", "--n", "16", "--seed", "3",
                 "--split", "eval", "--out", str(root / "eval.syml")]) == 0
    assert main(["train", "--dataset", str(root / "train.syml"),
                 "--out", str(root / "model.ckpt"),
                 "--log", str(root / "log.jsonl"),
                 "--epochs", "2", "--lr", "0.01", *TINY_TRAIN]) == 0
    return root


# -- generate ----------------------------------------------------------------


def test_generate_is_deterministic(tmp_path):
    args = ["generate", "--shape", "cube", "--n", "10", "--seed", "7"]
    assert main([*args, "--out", str(tmp_path / "a.syml")]) == 0
    assert main([*args, "--out", str(tmp_path / "b.syml")]) == 0
    assert _sha(tmp_path / "a.syml") == _sha(tmp_path / "b.syml")


def test_generate_rejects_bad_shape(tmp_path, capsys):
    code = main(["generate", "--shape", "bogus", "--n", "4",
                 "--out", str(tmp_path / "x.syml")])
    assert code == 1
    err = capsys.readouterr().err
    assert "cube" in err and "tetX" in err  # names the valid shapes


# -- train -------------------------------------------------------------------


def test_train_writes_checkpoint_and_log(workdir):
    assert (workdir / "model.ckpt").exists()
    rows = [json.loads(l) for l in
            (workdir / "log.jsonl").read_text().strip().split("\n")]
    assert len(rows) == 2
    assert rows[0]["lr"] == 0.01
    assert set(rows[0]) == {"epoch", "loss", "lr", "wall_time", "steps"}


def test_checkpoint_embeds_resolved_config(workdir):
    from spherepose.model import Model

    model = Model.load(workdir / "model.ckpt")
    assert model.config.band_limit == 2
    assert model.config.encoder_channels == (6, 8)
    assert model.config.projection == "spatial"  # default survived the merge


def test_flags_beat_config_file(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 0.123, "epochs": 1}))
    log = tmp_path / "log.jsonl"
    assert main(["train", "--dataset", str(workdir / "train.syml"),
                 "--out", str(tmp_path / "m.ckpt"), "--log", str(log),
                 "--config", str(cfg), "--max-steps", "1", *TINY_TRAIN]) == 0
    assert json.loads(log.read_text().split("\n")[0])["lr"] == 0.123

    assert main(["train", "--dataset", str(workdir / "train.syml"),
                 "--out", str(tmp_path / "m.ckpt"), "--log", str(log),
                 "--config", str(cfg), "--lr", "0.456", "--max-steps", "1",
                 *TINY_TRAIN]) == 0
    assert json.loads(log.read_text().split("\n")[0])["lr"] == 0.456


def test_unknown_config_key_rejected(workdir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    code = main(["train", "--dataset", str(workdir / "train.syml"),
                 "--out", str(tmp_path / "m.ckpt"), "--config", str(cfg),
                 "--max-steps", "1", *TINY_TRAIN])
    assert code == 1
    assert "learning_rate" in capsys.readouterr().err


def test_train_is_deterministic(workdir, tmp_path):
    args = ["train", "--dataset", str(workdir / "train.syml"),
            "--epochs", "1", "--lr", "0.01", *TINY_TRAIN]
    assert main([*args, "--out", str(tmp_path / "a.ckpt")]) == 0
    assert main([*args, "--out", str(tmp_path / "b.ckpt")]) == 0
    assert _sha(tmp_path / "a.ckpt") == _sha(tmp_path / "b.ckpt")


def test_missing_dataset_is_validation_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope.syml"),
                 "--out", str(tmp_path / "m.ckpt"), *TINY_TRAIN]) == 1


def test_invalid_flag_value_is_validation_error(workdir, tmp_path):
    assert main(["train", "--dataset", str(workdir / "train.syml"),
                 "--out", str(tmp_path / "m.ckpt"), "--lr", "-1",
                 *TINY_TRAIN]) == 1


def test_bad_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


# -- eval --------------------------------------------------------------------


def test_eval_writes_schema_valid_report(workdir, tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["eval", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "eval.syml"),
                 "--grid-recursion", "2", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    agg = report["aggregate"]
    assert set(agg) == {"n", "med_err_deg", "acc15", "acc30", "avg_log_lik"}
    assert 0 <= agg["acc15"] <= agg["acc30"] <= 1
    assert report["config"]["model"]["band_limit"] == 2
    assert report["config"]["grid_recursion"] == 2
    assert "avg_log_lik" in capsys.readouterr().out


def test_eval_rejects_train_split(workdir, tmp_path):
    assert main(["eval", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "train.syml"),
                 "--grid-recursion", "1", "--out", str(tmp_path / "r.json")]) == 1


def test_eval_is_deterministic(workdir, tmp_path):
    args = ["eval", "--checkpoint", str(workdir / "model.ckpt"),
            "--dataset", str(workdir / "eval.syml"), "--grid-recursion", "1"]
    assert main([*args, "--out", str(tmp_path / "a.json")]) == 0
    assert main([*args, "--out", str(tmp_path / "b.json")]) == 0
    assert _sha(tmp_path / "a.json") == _sha(tmp_path / "b.json")


# -- viz ---------------------------------------------------------------------


def test_viz_renders_deterministic_svg(workdir, tmp_path):
    args = ["viz", "--checkpoint", str(workdir / "model.ckpt"),
            "--dataset", str(workdir / "eval.syml"), "--index", "3",
            "--grid-recursion", "1"]
    assert main([*args, "--out", str(tmp_path / "a.svg")]) == 0
    assert main([*args, "--out", str(tmp_path / "b.svg")]) == 0
    assert _sha(tmp_path / "a.svg") == _sha(tmp_path / "b.svg")
    svg = (tmp_path / "a.svg").read_text()
    assert svg.startswith("<svg")
    assert "<!-- config:" in svg and '"band_limit": 2' in svg


def test_viz_index_out_of_range(workdir, tmp_path):
    assert main(["viz", "--checkpoint", str(workdir / "model.ckpt"),
                 "--dataset", str(workdir / "eval.syml"), "--index", "99",
                 "--out", str(tmp_path / "x.svg")]) == 1


# -- environment -------------------------------------------------------------


def test_out_dir_env_redirects_relative_paths(tmp_path, monkeypatch):
    monkeypatch.setenv("SPHEREPOSE_OUT_DIR", str(tmp_path / "outs"))
    monkeypatch.chdir(tmp_path)
    assert main(["generate", "--shape", "cyl", "--n", "4",
                 "--out", "rel.syml"]) == 0
    assert (tmp_path / "outs" / "rel.syml").exists()


def test_threads_flag_sets_blas_env(tmp_path, monkeypatch):
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    assert main(["--threads", "2", "generate", "--shape", "cyl", "--n", "2",
                 "--out", str(tmp_path / "t.syml")]) == 0
    import os

    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert main(["--threads", "0", "generate", "--shape", "cyl", "--n", "2",
                 "--out", str(tmp_path / "t.syml")]) == 1


# -- selftest ----------------------------------------------------------------


def test_selftest_passes_clean(capsys, monkeypatch):
    monkeypatch.delenv("SPHEREPOSE_SELFTEST_FAULT", raising=False)
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "gradient-check" in out and "FAIL" not in out


def test_selftest_fault_injection_names_failed_check(capsys, monkeypatch):
    monkeypatch.setenv("SPHEREPOSE_SELFTEST_FAULT", "wigner")
    assert main(["selftest"]) == 2
    out = capsys.readouterr().out
    assert "FAILED: s2-conv-equivariance" in out
