import json

import pytest

from lmnqs.cli import main

E0_TFI_N10_H1 = -12.784906442999324


def _last_json(out: str) -> dict:
    return json.loads(out.strip().splitlines()[-1])


def test_train_writes_csv_and_summary(tmp_path, capsys):
    code = main(["train", "--model", "tfi", "--N", "6", "--h", "1.0", "--opt", "lm", "--seed", "7",
                 "--epochs", "3", "--samples", "200", "--out", str(tmp_path), "--quiet"])
    assert code == 0
    info = _last_json(capsys.readouterr().out)
    summary = json.loads(open(info["summary"]).read())
    assert summary["seed"] == 7 and summary["config"]["n_sites"] == 6
    assert open(info["csv"]).readline().startswith("epoch,energy_re,energy_var,eps_rel")


def test_oracle_line_and_fixture(tmp_path, capsys):
    fixture = tmp_path / "e0.jsonl"
    assert main(["oracle", "--model", "tfi", "--N", "10", "--h", "1.0", "--fixture", str(fixture)]) == 0
    line = _last_json(capsys.readouterr().out)
    assert line["E0"] == pytest.approx(E0_TFI_N10_H1, abs=1e-9)
    assert json.loads(fixture.read_text())["N"] == 10


def test_sweep_then_report(tmp_path, capsys):
    assert main(["sweep", "--N", "4", "--h", "1.0", "--epochs", "2", "--samples", "100",
                 "--seeds", "0:2", "--grid-opt", "sr,lm", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    rep_json = tmp_path / "rep.json"
    phase = tmp_path / "phase.csv"
    assert main(["report", "--in", str(tmp_path), "--b", "2e-3", "--json", str(rep_json),
                 "--phase-csv", str(phase)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("model\tN\tparam\toptimizer")
    rep = json.loads(rep_json.read_text())
    assert {r["optimizer"] for r in rep["reliability"]} == {"sr", "lm"}
    assert phase.read_text().splitlines()[0] == "N,param,dT_u,dT,complete"


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model: tfi\nh: 0.5\nn_sites: 4\noptimizer: sr\nmax_epochs: 2\n")
    assert main(["train", "--config", str(cfg), "--h", "2.0", "--samples", "100",
                 "--out", str(tmp_path), "--quiet"]) == 0
    info = _last_json(capsys.readouterr().out)
    summary = json.loads(open(info["summary"]).read())
    assert summary["config"]["h"] == 2.0 and summary["config"]["optimizer"] == "sr"


@pytest.mark.parametrize("argv", [
    ["train", "--model", "tfi", "--h", "1", "--j2", "0.5", "--N", "4"],
    ["train", "--N", "4", "--magnetization", "0", "--occupation", "2"],
    ["train", "--N", "4", "--eta", "-1"],
    ["oracle", "--model", "tfi"],
    ["report", "--in", "/nonexistent-dir-xyz"],
])
def test_invalid_input_exits_nonzero(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_validate_subcommand(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("train", "sweep", "oracle", "report", "validate"):
        assert cmd in out
