"""
servnet command line: exit codes and output files.
"""
import json

import pytest

from servnet_tool.cli import main
from servnet_tool.core import sample_points


def test_run_writes_outputs(scenario_dir, tmp_path, capsys):
    code = main(["run", str(scenario_dir / "honest_pair.json"), "--out", str(tmp_path)])
    assert code == 0
    target = tmp_path / "honest-pair"
    assert (target / "events.jsonl").exists()
    csv_lines = (target / "snapshot.csv").read_text().splitlines()
    assert csv_lines[0] == "server,T,POS,NEG,GR,authority"
    assert [line.split(",")[0] for line in csv_lines[1:]] == ["S1", "S2"]
    report = json.loads((target / "report.json").read_text())
    assert report["passed"] is True
    assert "✓" in capsys.readouterr().out


def test_run_is_byte_stable(scenario_dir, tmp_path):
    for out in ("a", "b"):
        assert main(["run", str(scenario_dir / "honest_pair.json"), "--out", str(tmp_path / out)]) == 0
    for name in ("events.jsonl", "snapshot.csv", "report.json"):
        first = (tmp_path / "a" / "honest-pair" / name).read_bytes()
        assert first == (tmp_path / "b" / "honest-pair" / name).read_bytes()


def test_seed_override(scenario_dir, tmp_path):
    main(["run", str(scenario_dir / "honest_pair.json"), "--out", str(tmp_path / "a")])
    main(["run", str(scenario_dir / "honest_pair.json"), "--seed", "99", "--out", str(tmp_path / "b")])
    first = (tmp_path / "a" / "honest-pair" / "events.jsonl").read_text()
    assert first != (tmp_path / "b" / "honest-pair" / "events.jsonl").read_text()


def test_failed_expectation_exits_one(scenario_dir, tmp_path, capsys):
    code = main(["run", str(scenario_dir / "honest_pair_failing.json"), "--out", str(tmp_path)])
    assert code == 1
    assert "❌ S2 is famous after one trade" in capsys.readouterr().out


def test_out_dir_from_environment(scenario_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("SERVNET_OUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(scenario_dir / "honest_pair.json")]) == 0
    assert (tmp_path / "env" / "honest-pair" / "report.json").exists()


def test_run_missing_scenario_exits_two(tmp_path):
    assert main(["run", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_validate(scenario_dir, tmp_path, capsys):
    assert main(["validate", str(scenario_dir / "rotation.json")]) == 0
    assert "✓ rotation" in capsys.readouterr().out

    broken = tmp_path / "broken.json"
    broken.write_text('{"nodes": [{"id": "S1"}], "trade_schedule": [{"tick": 1}]}')
    assert main(["validate", str(broken)]) == 2
    assert "Invalid scenario" in capsys.readouterr().out

    not_json = tmp_path / "not.json"
    not_json.write_text("{nodes")
    assert main(["validate", str(not_json)]) == 2


def test_fairness_threshold(capsys):
    assert main(["fairness", "--m1", "20", "--t2", "100", "--m2", "10"]) == 0
    out = capsys.readouterr().out
    assert "threshold T1 = 58" in out
    assert "Linear scan:   T1 = 58" in out
    assert "GR=818.1818" in out


def test_fairness_rejects_unit_period(capsys):
    assert main(["fairness", "--m1", "1", "--t2", "100", "--m2", "10"]) == 2
    assert main(["fairness", "--m1", "20", "--t2", "100", "--m2", "1"]) == 2


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as err:
        main(["fairness", "--m1", "20"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["attack-suite", "--disable", "firewall"])
    assert err.value.code == 2


def test_sample_points():
    assert sample_points(20, 58) == [20, 40, 60]
    assert sample_points(10, 5) == [10, 20, 30]


def test_attack_suite_command(tmp_path, capsys):
    assert main(["attack-suite", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "attack-suite" / "summary.json").read_text())
    assert summary["disabled"] == []
    assert len(summary["scenarios"]) == 8
    assert all(s["passed"] for s in summary["scenarios"])
    assert (tmp_path / "attack-suite" / "contract-mitm.events.jsonl").exists()


def test_attack_suite_negative_control(tmp_path):
    assert main(["attack-suite", "--out", str(tmp_path), "--disable", "transcript_check"]) == 1
    summary = json.loads((tmp_path / "attack-suite" / "summary.json").read_text())
    assert summary["disabled"] == ["transcript_check"]
