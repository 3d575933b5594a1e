import json

import pytest
import yaml

from gancompress.cli import build_parser, main, verify_manifest
from gancompress.costmodel import network_cost
from gancompress.netspec import TensorShape, teacher_generator_spec

TINY = dict(phase1_epochs=1, phase2_epochs=1, decay_start=1, batch_size=2, seed=3,
            resolution=32, extractor="identity", disc_base=8, n_decom=1,
            dataset=dict(kind="synth", n=4))


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_inspect_totals_match_cost_model(tmp_path, capsys):
    assert main(["inspect", "--arch", "teacher", "--input", "3x256x256", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    report = network_cost(teacher_generator_spec(), TensorShape(3, 256, 256))
    rows = (tmp_path / "cost_teacher.csv").read_text().splitlines()[1:]
    assert sum(int(r.split(",")[2]) for r in rows) == report.total_params
    assert sum(int(r.split(",")[3]) for r in rows) == report.total_macs
    assert f"{report.total_params:,}" in text
    assert verify_manifest(tmp_path / "manifest_inspect.json")


def test_inspect_rejects_zero_blocks(tmp_path, capsys):
    assert main(["inspect", "--arch", "student", "--n-decom", "0", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "invalid config" in err and "n_decom" in err and len(err.strip().splitlines()) == 1


def test_bad_config_field_path(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("weights: {beta: -1}\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "weights.beta" in capsys.readouterr().err
    bad.write_text("dataset: {kind: synth, n: many}\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "dataset.n" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_train_both_deterministic(tmp_path, tiny_config):
    logs = []
    for run in ("a", "b"):
        out = tmp_path / run
        t = ["train", "--config", str(tiny_config), "--arch", "teacher", "--phase", "1",
             "--out", str(out / "t")]
        assert main(t) == 0
        assert main(["train", "--config", str(tiny_config), "--phase", "both",
                     "--teacher", str(out / "t" / "teacher.pt"), "--seed", "7",
                     "--out", str(out / "s")]) == 0
        logs.append((out / "s" / "metrics.csv").read_bytes())
        manifest = json.loads((out / "s" / "manifest_train-both.json").read_text())
        assert manifest["seed"] == 7 and "phase2.pt" in manifest["artifacts"]
        assert verify_manifest(out / "s" / "manifest_train-both.json")
    assert logs[0] == logs[1]
    assert len(logs[0].decode().splitlines()) == 3


def test_train_phase2_without_teacher(tmp_path, tiny_config, capsys):
    assert main(["train", "--config", str(tiny_config), "--phase", "2",
                 "--out", str(tmp_path)]) == 2
    assert "teacher" in capsys.readouterr().err


def test_eval_and_bench(tmp_path, tiny_config):
    out = tmp_path / "s"
    assert main(["train", "--config", str(tiny_config), "--phase", "1", "--out", str(out)]) == 0
    assert main(["eval", "--checkpoint", str(out / "phase1.pt"), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "eval.csv").read_text().startswith("src,ref,d_makeup")
    assert main(["bench", "--checkpoint", str(out / "phase1.pt"), "--runs", "3", "--warmup", "0",
                 "--out", str(tmp_path / "b")]) == 0
    assert main(["bench", "--arch", "student", "--input", "3x32x32", "--runs", "2",
                 "--out", str(tmp_path / "b2")]) == 1


def test_synth_data_round_trip(tmp_path):
    assert main(["synth-data", "--n", "6", "--size", "32", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "makeup").glob("*.png"))) == 3
    assert verify_manifest(tmp_path / "manifest_synth-data.json")


def test_help_lists_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
