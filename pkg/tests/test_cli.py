import csv
import json

import pytest

from heatlab import sweep
from heatlab.agent import HeatAgent
from heatlab.cli import main
from heatlab.env import load_buffer

TINY = """
[experiment]
nodes = 4
delta = 2
duration_s = 180
seeds = 0
algorithms = random
offline_minutes = 3
train_every = 8
[heat]
pretrain_steps = 3
model_dim = 8
ff_dim = 12
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return str(p)


def test_dump_tables(capsys, tmp_path):
    assert main(["dump-tables"]) == 0
    text = capsys.readouterr().out
    assert "noise_floor_dbm,-117.03" in text and "[heat]" in text
    out = tmp_path / "t.csv"
    assert main(["dump-tables", "--out", str(out)]) == 0
    assert out.read_text() == text


def test_usage_and_config_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--algo", "qmix"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[actions]\nusf_set = 13\n")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "usf_set" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["simulate", "--seed", "-1"]) == 1


def test_simulate_writes_row_and_trace(cfg_path, tmp_path, capsys):
    out, trace = tmp_path / "m.csv", tmp_path / "trace.csv"
    assert main(["simulate", "--config", cfg_path, "--algo", "adrx", "--seed", "2",
                 "--out", str(out), "--trace", str(trace)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1 and rows[0]["algo"] == "adrx" and rows[0]["seed"] == "2"
    tr = list(csv.DictReader(trace.open()))
    assert len(tr) == int(rows[0]["sent"])
    assert sum(r["verdict"] == "delivered" for r in tr) == int(rows[0]["succ"])
    assert capsys.readouterr().out == out.read_text()


def test_collect_then_train(cfg_path, tmp_path, capsys):
    buf = tmp_path / "b.jsonl"
    assert main(["collect-offline", "--config", cfg_path, "--out", str(buf)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["transitions"] == len(load_buffer(buf)) > 0
    ckpt = tmp_path / "h.ckpt"
    assert main(["train", "--config", cfg_path, "--algo", "heat", "--buffer", str(buf), "--out", str(ckpt)]) == 0
    res = json.loads(capsys.readouterr().out)
    agent = HeatAgent.load(ckpt)
    assert agent.online_updates_ == res["train_updates"] > 0
    assert agent.offline_updates_ >= 3


def test_train_refusals(cfg_path, tmp_path):
    assert main(["train", "--config", cfg_path, "--algo", "random"]) == 1
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"format": "heatlab-buffer"')
    assert main(["train", "--config", cfg_path, "--algo", "heat", "--buffer", str(broken)]) == 1


def test_sweep_exit_codes(cfg_path, tmp_path, monkeypatch, capsys):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", cfg_path, "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2

    def broken(*a, **k):
        raise RuntimeError("cell failed")

    monkeypatch.setattr(sweep, "run_algorithm", broken)
    assert main(["sweep", "--config", cfg_path, "--out", str(out)]) == 2
    assert "cell failed" in out.read_text()
