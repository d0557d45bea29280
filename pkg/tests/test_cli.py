import csv
import json

import pytest

from fnac.cli import main
from fnac.marketdata import load_csv

CONFIG = {
    "seed": 1,
    "market": {"noise": 2e-5, "amplitude": 5e-5, "spread": 1e-5},
    "data": {"synthetic": {"train": 3, "valid": 2, "valid_actor": 1, "test": 2}},
    "env": {"persistence": 20, "fee": {"kind": "step"}},
    "critic": {"rounds": 3, "max_depth": 3, "sweeps": 1},
    "train": {"iterations": 2, "alpha": 100.0, "hidden": [4], "early_stop": 0},
    "select": {"grid": {"ridge": [0.5, 1.0], "alpha": [10.0]}},
    "backtest": {"seeds": [0, 1]},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(CONFIG))
    return p


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_synth(cfg_path, tmp_path):
    out = tmp_path / "data" / "market.csv"
    assert main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert len(load_csv(out)) == 8


def test_synth_csv_feeds_config(cfg_path, tmp_path):
    out = tmp_path / "m.csv"
    main(["synth", "--config", str(cfg_path), "--out", str(out)])
    cfg = dict(CONFIG, data={"train": str(out), "valid": str(out), "test": "m.csv"})
    p = tmp_path / "csv.json"
    p.write_text(json.dumps(cfg))
    assert main(["oracle", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "oracle.csv")) == 9


def test_train_then_backtest_and_report(cfg_path, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(run), "--iterations", "3", "--workers", "2"]) == 0
    for f in ("report.csv", "timing.csv", "policy.json", "critic.json", "train_config.json"):
        assert (run / f).exists()
    assert len(rows(run / "report.csv")) == 4
    assert json.loads((run / "train_config.json").read_text())["iterations"] == 3

    bt = tmp_path / "bt"
    assert main(["backtest", "--config", str(cfg_path), "--out", str(bt), "--policy", str(run / "policy.json")]) == 0
    table = rows(bt / "episodes.csv")
    assert table[0] == ["date", "return", "return_pct", "cumulative_pct", "cumulative_pct_std"] and len(table) == 3

    rp = tmp_path / "rp"
    args = ["report", "--config", str(cfg_path), "--out", str(rp), "--policy", str(run / "policy.json"),
            "--critic", str(run / "critic.json"), "--split", "valid"]
    assert main(args) == 0
    assert len(rows(rp / "feature_importance.csv")) == 50


def test_train_is_reproducible(cfg_path, tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / d)]) == 0
    for f in ("report.csv", "policy.json", "critic.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override(cfg_path, tmp_path):
    main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "9"])
    assert (tmp_path / "a" / "policy.json").read_bytes() != (tmp_path / "b" / "policy.json").read_bytes()


def test_select(cfg_path, tmp_path):
    assert main(["select", "--config", str(cfg_path), "--out", str(tmp_path / "s")]) == 0
    table = rows(tmp_path / "s" / "selection.csv")
    assert [r[0] for r in table[1:]] == ["1", "1", "2"]
    assert json.loads((tmp_path / "s" / "best_config.json").read_text())["alpha"] == 10.0


def test_baseline_backtest(cfg_path, tmp_path):
    assert main(["backtest", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--baseline", "buy_hold"]) == 0
    assert main(["report", "--config", str(cfg_path), "--out", str(tmp_path / "r"), "--baseline", "sell_hold"]) == 0
    assert rows(tmp_path / "r" / "feature_importance.csv") == [["feature", "importance"]]


def test_oracle(cfg_path, tmp_path):
    assert main(["oracle", "--config", str(cfg_path), "--out", str(tmp_path / "o"), "--split", "all"]) == 0
    table = rows(tmp_path / "o" / "oracle.csv")
    assert len(table) == 9 and all(float(r[1]) >= 0 for r in table[1:])


def test_error_is_one_line(cfg_path, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"env": {"persistance": 3}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ConfigError:")


def test_missing_config(tmp_path, capsys):
    assert main(["oracle", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: FileNotFoundError")


def test_empty_split(cfg_path, tmp_path, capsys):
    cfg = dict(CONFIG, data={"synthetic": {"train": 2}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["backtest", "--config", str(p), "--out", str(tmp_path / "b"), "--baseline", "buy_hold"]) == 1
    assert "split 'test'" in capsys.readouterr().err


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code != 0
