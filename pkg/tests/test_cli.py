import json
import subprocess
import sys

import pytest

from geoformer.cli import build_parser, main

SUBCOMMANDS = ["synth", "train", "eval", "gradcheck", "bench"]
SMALL_MODEL = {"model": {"patch_size": 16, "d_model": 8, "n_heads": 2, "spatial_blocks": 1,
                          "temporal_blocks": 1, "head_hidden": 8}}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, ckpt = root / "data", root / "ckpt"
    assert main(["synth", "--stations", "5", "--days", "16", "--history", "4", "--out", str(data)]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL_MODEL))
    assert main(["train", "--data", str(data), "--epochs", "2", "--config", str(cfg), "--out", str(ckpt)]) == 0
    return root, data, ckpt


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero_and_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main([cmd, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["bench", "--bogus"])
    assert info.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_too_few_days_exits_one(tmp_path, capsys):
    assert main(["synth", "--days", "20", "--history", "32", "--out", str(tmp_path / "d")]) == 1
    assert "history" in capsys.readouterr().err


def test_missing_dataset_exits_two(tmp_path):
    assert main(["eval", "--ckpt", str(tmp_path / "none"), "--data", str(tmp_path / "none")]) == 2


def test_train_flag_overrides_file(tmp_path):
    from geoformer.cli import resolve_train_settings

    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"d_model": 16}, "train": {"lr": 0.5, "epochs": 7}}))
    args = build_parser().parse_args(["train", "--data", "x", "--out", "y", "--config", str(cfg), "--lr", "0.01"])
    model_cfg, train_cfg = resolve_train_settings(args)
    assert model_cfg.d_model == 16 and train_cfg.lr == 0.01 and train_cfg.epochs == 7
    assert train_cfg.batch_size == 16 and train_cfg.seed == 42


def test_synth_split(small_run):
    _, data, _ = small_run
    manifest = json.loads((data / "manifest.json").read_text())
    assert [s["split"] for s in manifest["stations"]].count("test") == 1


def test_train_outputs(small_run):
    _, _, ckpt = small_run
    assert (ckpt / "loss.csv").read_text().startswith("epoch,train_mse\n")
    manifest = json.loads((ckpt / "manifest.json").read_text())
    assert manifest["train_config"]["epochs"] == 2 and manifest["config"]["d_model"] == 8


def test_eval_prints_json(small_run, capsys):
    _, data, ckpt = small_run
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--split", "test"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert list(report) == ["mae", "mse", "n_samples", "param_count", "size_bytes"]
    assert report["n_samples"] == 6
    assert report["size_bytes"] == sum(f.stat().st_size for f in (ckpt / "params").iterdir())


def test_bench_csv(capsys):
    assert main(["bench", "--lengths", "64,128,256"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "length,dense_dots,sparse_dots,dense_ms,sparse_ms"
    rows = [line.split(",") for line in lines[1:4]]
    assert [int(r[1]) for r in rows] == [64**2, 128**2, 256**2]
    assert lines[4].startswith("slope,2.0000,")


def test_bad_lengths_exit_one():
    with pytest.raises(SystemExit) as info:
        main(["bench", "--lengths", "12,abc"])
    assert info.value.code == 1


@pytest.mark.slow
def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "geoformer_tiny" in out and out.strip().endswith("all checks passed")


def test_gradcheck_impossible_tolerance_exits_one(capsys):
    assert main(["gradcheck", "--tol", "0"]) == 1


def test_console_module_entry():
    result = subprocess.run([sys.executable, "-m", "geoformer", "bench", "--lengths", "16,32"],
                            capture_output=True, text=True, check=False)
    assert result.returncode == 0 and result.stdout.startswith("length,")
