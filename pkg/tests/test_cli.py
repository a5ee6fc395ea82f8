import json
from pathlib import Path

import pytest

from murphy.harness.cli import main
from murphy.synthgen import load_dataset

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(SMOKE), "--out", str(out), "--sequences", "5", "--seed", "3"]) == 0
    summary = _json_out(capsys)
    assert (summary["train"], summary["test"]) == (3, 2)
    ds = load_dataset(out)
    assert len(ds.sequences) == 5 and sum(len(s) for s in ds.sequences) == summary["frames"]


def test_gen_data_rejects_bad_split(tmp_path):
    with pytest.raises(SystemExit):
        main(["gen-data", "--out", str(tmp_path), "--sequences", "3", "--train-sequences", "4"])


def test_train_then_eval(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(SMOKE), "--output-dir", str(run)]) == 0
    trained = _json_out(capsys)
    report_file = tmp_path / "eval.json"
    ckpt = run / "checkpoint_best.pt"
    assert main(["eval", "--checkpoint", str(ckpt), "--split", "test", "--out", str(report_file)]) == 0
    report = _json_out(capsys)
    assert report == json.loads(report_file.read_text())
    assert report["sap3"] == pytest.approx(trained["sap3"])


def test_gradcheck_single_module(capsys):
    assert main(["gradcheck", "--module", "heads"]) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["module"] == "heads" and line["pass"] is True


def test_gradcheck_failure_sets_exit_code(capsys):
    assert main(["gradcheck", "--module", "heads", "--tol", "0"]) == 1


def test_ablate(tmp_path, capsys):
    code = main([
        "ablate", "--config", str(SMOKE), "--variants", "baseline", "murphy",
        "--seeds", "0", "--output-dir", str(tmp_path),
    ])
    assert code == 0
    means = _json_out(capsys)
    assert set(means) == {"baseline", "murphy"}
    assert (tmp_path / "ablation.json").exists()


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["fly"])
