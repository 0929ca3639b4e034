import csv
import json
from pathlib import Path

import pytest

from adeptheq import cli, metrics
from adeptheq.config import parse_config

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["run", "--config", str(CONFIGS / "toy.cfg"), "--rounds", "2", "--out", str(out)])
    return code, out


def test_run_writes_outputs(toy_run, capsys):
    code, out = toy_run
    assert code == 0
    for name in ("metrics.csv", "summary.json", "manifest.json"):
        assert (out / name).exists()
    rows = list(csv.reader((out / "metrics.csv").open()))
    assert rows[0] == metrics.COLUMNS
    assert len(rows) == 2 + 1
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == 7 and len(man["dataset_checksum"]) == 64
    summ = json.loads((out / "summary.json").read_text())
    assert summ["rounds"] == 2


def test_strip_timing_drops_duration(toy_run):
    _, out = toy_run
    stripped = metrics.strip_timing((out / "metrics.csv").read_text())
    header = stripped.splitlines()[0].split(",")
    assert "duration_s" not in header and header[0] == "round"


def test_unknown_subcommand_is_usage_error():
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[aggregation]\ntau = -1\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "bad.cfg:2" in capsys.readouterr().err


def test_grad_check_command(capsys):
    assert cli.main(["grad-check", "--coords", "30"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_partition_stats(capsys):
    assert cli.main(["partition-stats", "--config", str(CONFIGS / "toy.cfg")]) == 0
    out = capsys.readouterr().out
    assert out.count("client ") == parse_config(CONFIGS / "toy.cfg").n_clients


def test_he_bench(capsys):
    assert cli.main(["he-bench", "--clients", "3", "--length", "10"]) == 0
    assert "NOT cryptographically secure" in capsys.readouterr().out
