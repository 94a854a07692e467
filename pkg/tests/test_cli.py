import json
import subprocess
import sys

import pytest

from privmarket.cli import UsageError, main, parse_args, parse_oracle, parse_privacy
from privmarket.core import Dataset
from privmarket.fixtures import wisdm_lines

from conftest import toy_dataset

HARM = "harm;base=0.5;rho=8;weights=1:0.1,2:0.1,3:0.1"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_privacy():
    assert parse_privacy("2:4,3:8") == {2: 4.0, 3: 8.0}
    assert parse_privacy("") == {}
    for bad in ("2:4,2:8", "2=4", "2:-1", "x:1"):
        with pytest.raises(UsageError):
            parse_privacy(bad)


def test_parse_oracle_forms(tmp_path):
    compact = parse_oracle(HARM)
    assert compact == {"kind": "harm", "base": 0.5, "rho": 8, "weights": {1: 0.1, 2: 0.1, 3: 0.1}}
    path = tmp_path / "o.json"
    path.write_text(json.dumps({"kind": "additive", "weights": {"1": 0.2}}))
    assert parse_oracle(str(path))["kind"] == "additive"
    assert parse_oracle('{"kind": "diminishing"}') == {"kind": "diminishing"}


def test_flag_beats_config_beats_env(tmp_path, monkeypatch):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 3, "privacy": {"2": 1.0}, "oracle": HARM}))
    monkeypatch.setenv("PRIVMARKET_SEED", "11")
    assert parse_args(["payoffs", "--config", str(cfg)]).seed == 3
    assert parse_args(["payoffs", "--config", str(cfg), "--seed", "7"]).seed == 7
    assert parse_args(["payoffs", "--oracle", HARM]).seed == 11
    assert parse_args(["payoffs", "--config", str(cfg), "--privacy", "3:2"]).privacy == {3: 2.0}


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"oracle": HARM, "colour": "red"}))
    with pytest.raises(UsageError, match="colour"):
        parse_args(["payoffs", "--config", str(cfg)])


def test_usage_errors_exit_2(capsys):
    assert run_cli(capsys, "dance")[0] == 2
    assert run_cli(capsys)[0] == 2
    code, _, err = run_cli(capsys, "payoffs", "--oracle", HARM, "--privacy", "1:2,1:3")
    assert code == 2 and "twice" in err
    code, _, err = run_cli(capsys, "sweep", "--oracle", HARM)
    assert code == 2 and "--varying" in err


def test_runtime_errors_exit_1(capsys, tmp_path):
    code, _, err = run_cli(capsys, "payoffs", "--oracle", HARM, "--privacy", "9:1")
    assert code == 1 and "ParameterError" in err
    code, _, err = run_cli(capsys, "payoffs", "--oracle", HARM, "--out", str(tmp_path / "no" / "x.csv"))
    assert code == 1 and "ReportError" in err


def test_harm_payoffs_csv(capsys):
    code, out, _ = run_cli(capsys, "payoffs", "--oracle", HARM, "--privacy", "2:8,3:24")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "user,payoff,class"
    classes = [line.split(",")[2] for line in lines[1:]]
    assert classes == ["pivotal", "neutral", "negative"]


def test_filter_command(capsys):
    code, out, _ = run_cli(capsys, "filter", "--oracle", HARM, "--privacy", "2:8,3:24")
    assert code == 0
    assert "3,excluded,," in out


def test_sweep_command_json(capsys, tmp_path):
    path = tmp_path / "s.json"
    code, out, _ = run_cli(capsys, "sweep", "--oracle", "harm;weights=1:0.2,2:0.1", "--vary", "1=0,4,8,16",
                           "--refine", "--json", str(path))
    assert code == 0
    assert len(out.strip().split("\n")) == 5
    summary = json.loads(path.read_text())
    assert summary["critical"] == [{"user": 1, "p": 16.0}]


def _classifier_args(tmp_path):
    data = toy_dataset({1: 30, 2: 30}, m=4, seed=4)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    return ["--dataset", str(path), "--oracle", "classifier;iterations=50", "--privacy", "2:1"]


def test_classifier_payoffs_byte_identical(capsys, tmp_path):
    args = _classifier_args(tmp_path)
    first = run_cli(capsys, "payoffs", *args, "--seed", "3")[1]
    second = run_cli(capsys, "payoffs", *args, "--seed", "3", "--jobs", "4")[1]
    assert first == second
    assert len(first.strip().split("\n")) == 3


def test_env_seed_used_when_flag_absent(capsys, tmp_path, monkeypatch):
    args = _classifier_args(tmp_path)
    monkeypatch.setenv("PRIVMARKET_SEED", "5")
    from_env = run_cli(capsys, "sweep", *args, "--vary", "1=0,2")[1]
    monkeypatch.delenv("PRIVMARKET_SEED")
    from_flag = run_cli(capsys, "sweep", *args, "--vary", "1=0,2", "--seed", "5")[1]
    assert from_env == from_flag


def test_seed_is_logged(capsys):
    _, _, err = run_cli(capsys, "accuracy", "--oracle", HARM, "--seed", "42")
    assert "seed 42" in err


def test_ingest_anonymize_report(capsys, tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text("\n".join(wisdm_lines({1: {"Walking": 450, "Jogging": 200}, 2: {"Sitting": 200}})))
    windows = tmp_path / "w.csv"
    assert run_cli(capsys, "ingest", "--input", str(raw), "--out", str(windows))[0] == 0
    data = Dataset.read_csv(windows)
    assert len(data) == 4 and data.m == 120

    noisy = tmp_path / "n.csv"
    assert run_cli(capsys, "anonymize", "--dataset", str(windows), "--p", "2", "--out", str(noisy))[0] == 0
    assert Dataset.read_csv(noisy).labels.tolist() == data.labels.tolist()

    summary = tmp_path / "c.json"
    code, csv_out, _ = run_cli(capsys, "coalition-exp", "--oracle", "diminishing;weights=1:0.5,2:0.5",
                               "--members", "1,2", "--json", str(summary))
    assert code == 0
    code, again, _ = run_cli(capsys, "report", "--input", str(summary))
    assert code == 0 and again == csv_out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "privmarket", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("privmarket")
