import csv
import json

import pytest
from click.testing import CliRunner

from latticebft.cli import main

from conftest import SCENARIOS


@pytest.fixture
def runner():
    return CliRunner()


def run_ok(runner, args):
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    return res


def test_run_baseline(runner, tmp_path):
    out = tmp_path / "r"
    res = run_ok(runner, ["run", str(SCENARIOS / "baseline_4x1.json"), "--out", str(out)])
    assert "verdicts:" in res.output
    for name in ("summary.txt", "summary.csv", "scenario.json", "verdicts.json", "ba.csv"):
        assert (out / name).exists()
    assert json.loads((out / "scenario.json").read_text())["seed"] == 1
    assert len(list((out / "batches").glob("node_*.log"))) == 4


def test_run_env_default_dir(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("LATTICEBFT_OUT", str(tmp_path))
    run_ok(runner, ["run", str(SCENARIOS / "baseline_4x1.json"), "--seed", "9"])
    assert (tmp_path / "baseline_4x1-seed9" / "summary.csv").exists()


def test_run_invalid_scenario(runner, tmp_path):
    res = runner.invoke(main, ["run", str(SCENARIOS / "invalid_notary_size.json"), "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_partition_heal_report(runner, tmp_path):
    out = tmp_path / "p"
    run_ok(runner, ["run", str(SCENARIOS / "partition_heal.json"), "--out", str(out)])
    with open(out / "ba.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    healed = [r for r in rows if r["post_heal_rounds"] != ""]
    assert healed
    t = (7 - 1) // 3
    assert all(int(r["post_heal_rounds"]) <= t + 2 for r in healed)


def test_order_check(runner, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    sc = str(SCENARIOS / "equivocate_7.json")
    run_ok(runner, ["run", sc, "--out", str(a)])
    run_ok(runner, ["run", sc, "--out", str(b)])
    run_ok(runner, ["order-check", str(a), str(b)])
    log = b / "batches" / "node_1.log"
    lines = log.read_text().splitlines()
    assert len(lines) > 3
    idx, mode, hashes = lines[2].split(",")
    lines[2] = f"{idx},{mode},{'0' * 64}"
    log.write_text("\n".join(lines) + "\n")
    res = runner.invoke(main, ["order-check", str(a), str(b)])
    assert res.exit_code == 1
    assert "node_1.log" in res.output and "at index 2" in res.output


def test_sizing_table(runner):
    res = run_ok(runner, ["sizing"])
    rows = list(csv.DictReader(res.output.splitlines()))
    assert len(rows) == 12
    cell = {(r["population"], r["byzantine"], r["target_log2"]): r for r in rows}
    assert cell["10000", "2500", "-60"]["computed"] == "1789"
    assert cell["10000", "2500", "-60"]["match"] == "match"
    row = cell["100000", "20000", "-60"]
    assert row["published"] == "774"
    if row["match"] == "MISMATCH":
        assert row["diagnosis"]


def test_sizing_single(runner):
    res = run_ok(runner, ["sizing", "--population", "10000", "--byzantine", "2000", "--target-log2", "-40"])
    assert res.output.startswith("m*=481 ")
    bad = runner.invoke(main, ["sizing", "--population", "10"])
    assert bad.exit_code != 0


def test_replay_report(runner, tmp_path):
    out = tmp_path / "r"
    run_ok(runner, ["run", str(SCENARIOS / "silent_4x1.json"), "--out", str(out), "--transcript"])
    assert (out / "transcript.csv").exists()
    res = run_ok(runner, ["replay", str(out), "--out", str(tmp_path / "again")])
    assert "transcript identical; outputs identical" in res.output


def test_replay_fixture_sweep(runner, tmp_path):
    out = tmp_path / "sweep"
    run_ok(runner, [
        "replay", str(SCENARIOS / "lattice_6x1000.txt"), "--nodes", "50", "--seed", "3", "--out", str(out),
    ])
    assert len(list((out / "batches").glob("*.log"))) == 50
    run_ok(runner, ["order-check", str(out)])


def test_help_lists_commands(runner):
    res = run_ok(runner, ["--help"])
    for cmd in ("run", "order-check", "sizing", "replay"):
        assert cmd in res.output
