import json

import pytest

from crossview.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_gradcheck_tiny_exits_zero(capsys, tmp_path):
    code, out, _ = _run(capsys, "gradcheck", "--preset", "tiny", "--set", f"output_dir={tmp_path}")
    assert code == 0
    assert json.loads(out)["passed"] is True
    rep = json.loads((tmp_path / "tiny" / "gradcheck.json").read_text())
    assert set(rep["checks"]) == {"stop_gradient_pv=False", "stop_gradient_pv=True"}


def test_gradcheck_failure_exit_code(capsys, tmp_path):
    code, _, _ = _run(capsys, "gradcheck", "--set", f"output_dir={tmp_path}", "--set", "gradcheck.tolerance=1e-30")
    assert code == 4


def test_eval_missing_checkpoint(capsys, tmp_path):
    code, _, err = _run(capsys, "eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path))
    assert code == 3
    line = json.loads(err.strip().splitlines()[-1])
    assert line["error"] == "NotFound" and line["exit_code"] == 3


def test_config_error_exit_code(capsys, tmp_path):
    code, _, err = _run(capsys, "train", "--preset", "tiny", "--set", "train.nope=1")
    assert code == 2
    assert json.loads(err)["error"] == "ConfigError"


def test_loco_layout(capsys, tmp_path):
    code, out, _ = _run(capsys, "loco", "--preset", "tiny", "--set", "synth.V=4", "--set", "train.epochs=1",
                        "--set", f"output_dir={tmp_path}")
    assert code == 0
    run = tmp_path / "tiny"
    folds = sorted(p.name for p in run.iterdir() if p.is_dir())
    assert folds == ["fold_view0", "fold_view1", "fold_view2", "fold_view3"]
    assert (run / "summary.json").is_file()
    assert {"inputs.json", "config.yaml"} <= {p.name for p in run.iterdir()}
    assert "mean_top1" in json.loads(out)


def test_synth_train_eval_probe_on_directory(capsys, tmp_path):
    data = tmp_path / "data"
    code, _, _ = _run(capsys, "synth", "--preset", "tiny", "--set", f"output_dir={tmp_path}", "--out", str(data))
    assert code == 0 and (data / "view0" / "0").is_dir()
    code, out, _ = _run(capsys, "train", "--preset", "tiny", "--set", f"output_dir={tmp_path}", "--set", "name=dir",
                        "--set", f"data.train_dir={data}")
    assert code == 0
    ckpt = tmp_path / "dir" / "checkpoint.ckpt"
    inputs = json.loads((tmp_path / "dir" / "inputs.json").read_text())
    assert inputs["command"] == "train" and len(inputs["config_hash"]) == 64
    code, out, _ = _run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(tmp_path / "ev"))
    assert code == 0 and json.loads(out)["n_samples"] == 48
    assert (tmp_path / "ev" / "confusion.csv").is_file()
    code, out, _ = _run(capsys, "probe", "--checkpoint", str(ckpt), "--data", str(data),
                        "--out", str(tmp_path / "pr"))
    assert code == 0
    assert set(json.loads(out)) == {"acc_pre", "acc_post", "drop"}
    assert (tmp_path / "pr" / "embeddings_val_post.csv").is_file()
    code, out, _ = _run(capsys, "probe", "--checkpoint", str(ckpt), "--data", str(data), "--val-data", str(data),
                        "--out", str(tmp_path / "pr2"))
    assert code == 0


def test_eval_with_label_map(capsys, tmp_path):
    data = tmp_path / "data"
    _run(capsys, "synth", "--preset", "tiny", "--set", f"output_dir={tmp_path}", "--out", str(data))
    _run(capsys, "train", "--preset", "tiny", "--set", f"output_dir={tmp_path}", "--set", "train.epochs=1")
    ckpt = tmp_path / "tiny" / "checkpoint.ckpt"
    lm = tmp_path / "map.json"
    lm.write_text(json.dumps({"mapping": {"0": "0", "1": "1", "2": "2", "3": None}}))
    code, out, _ = _run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data), "--label-map", str(lm))
    assert code == 0 and json.loads(out)["n_samples"] == 36


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("synth", "train", "eval", "loco", "probe", "gradcheck"):
        assert cmd in out
