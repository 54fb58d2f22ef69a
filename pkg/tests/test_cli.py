import csv
import io

import pytest

from cotnet import cli
from cotnet.zoo import load_spec


def test_profile_writes_budget_csv(tmp_path, capsys):
    assert cli.run(["profile", "--models", "resnet50,cotnet50", "--input", "224", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "budget.csv").read_text())))
    assert [r["model"] for r in rows] == ["resnet50", "cotnet50"]
    assert all(r["status"] == "pass" for r in rows)
    assert (tmp_path / "layers_cotnet50.csv").read_text().startswith("layer_path,params,macs")
    assert "multiply-accumulate" in capsys.readouterr().out


def test_profile_stage_flags(tmp_path):
    assert cli.run(["profile", "--models", "resnet50", "--stage-flags", "0,0,1,1", "--out", str(tmp_path)]) == 0
    assert "resnet50-cot0011" in (tmp_path / "budget.csv").read_text()


def test_profile_empty_list(tmp_path):
    assert cli.run(["profile", "--models", "", "--out", str(tmp_path)]) == 0


def test_gradcheck_exit_code(tmp_path):
    assert cli.run(["gradcheck", "--ops", "relu,linear", "--dtype", "f64", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "gradcheck.txt").read_text().splitlines()[-1] == "10/10 checks passed"
    assert cli.run(["gradcheck", "--ops", "missing", "--out", str(tmp_path)]) != 0


def test_export_spec(capsys):
    assert cli.run(["export-spec", "cotnext50"]) == 0
    spec = load_spec(capsys.readouterr().out)
    assert (spec.stages[0].width, spec.stages[0].cardinality) == (96, 2)
    assert cli.run(["export-spec", "cotnet50", "--softmax-attn", "off"]) == 0
    assert load_spec(capsys.readouterr().out).cot.softmax_attention is False


def test_train_and_eval(tmp_path, capsys):
    out = str(tmp_path)
    assert cli.run(["train", "--epochs", "2", "--samples", "32", "--batch", "16", "--out", out]) == 0
    first = (tmp_path / "metrics.csv").read_bytes()
    assert cli.run(["eval", "--checkpoint", str(tmp_path / "checkpoint.ckpt"), "--samples", "32"]) == 0
    assert "top1" in capsys.readouterr().out
    assert cli.run(["train", "--epochs", "2", "--samples", "32", "--batch", "16", "--out", out]) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == first


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.run(["profile", "--models", "resnet_tiny", "--input", "32"]) == 0
    assert (tmp_path / "env" / "budget.csv").exists()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["profile", "--mod", "resnet50"], ["train", "--softmax-attn", "maybe"],
                                  ["profile", "--stage-flags", "1,1"], ["export-spec"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        cli.run(argv)
    assert exc.value.code != 0


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.run(["train", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    assert "(default: 20)" in text and "(default: cotnet_tiny)" in text


def test_missing_checkpoint_is_reported(tmp_path, capsys):
    assert cli.run(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 2
    assert "error" in capsys.readouterr().err
