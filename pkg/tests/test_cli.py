import json

import pytest
from click.testing import CliRunner

from aggnet import flows
from aggnet.cli import main
from aggnet.graph import save_graph


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def triangle_file(tmp_path, triangle):
    path = tmp_path / "triangle.json"
    save_graph(triangle, path)
    return str(path)


@pytest.fixture
def schedules_file(tmp_path, shared_channel):
    path = tmp_path / "schedules.json"
    flows.save_schedule_set(shared_channel, path)
    return str(path)


def test_analyze_wired(runner, triangle_file):
    result = runner.invoke(main, ["analyze", "--graph", triangle_file])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["delta_star"] == 1.0
    assert doc["lambda_star"] == 1.0
    assert doc["argmin_node"] == 1
    total = sum(entry["weight"] for entry in doc["packing"])
    assert abs(total - 1.0) <= 1e-6


def test_analyze_with_schedules(runner, triangle_file, schedules_file, tmp_path):
    out = tmp_path / "report.json"
    result = runner.invoke(main, [
        "analyze", "--graph", triangle_file, "--schedules", schedules_file,
        "--function", "max", "--alphabet-size", "4", "-o", str(out),
    ])
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["delta_star"] == pytest.approx(0.5, abs=1e-6)
    assert doc["lambda_star"] == pytest.approx(0.25, abs=1e-6)  # log2(4) = 2
    assert "sss_rule" in doc


def test_analyze_with_tree_subset(runner, triangle_file, tmp_path):
    tpath = tmp_path / "trees.json"
    tpath.write_text(json.dumps({"trees": [{"1": 0, "2": 1}]}))
    result = runner.invoke(main, [
        "analyze", "--graph", triangle_file, "--trees", str(tpath),
    ])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert len(doc["packing"]) == 1
    assert doc["packing"][0]["parents"] == {"1": 0, "2": 1}
    assert doc["packing"][0]["weight"] == pytest.approx(1.0)


def test_simulate_wireline(runner, triangle_file, tmp_path):
    prefix = str(tmp_path / "run")
    result = runner.invoke(main, [
        "simulate", "--model", "wireline", "--graph", triangle_file,
        "--lambda", "0.5", "--seed", "3", "--horizon", "2000",
        "--sample-every", "5", "--out-prefix", prefix,
    ])
    assert result.exit_code == 0, result.output
    assert "stable" in result.output
    summary = json.loads((tmp_path / "run.json").read_text())
    assert summary["verdict"] == "stable"
    assert summary["completed"] > 500
    header = (tmp_path / "run.csv").read_text().splitlines()[0]
    assert header == "time,rounds_in_flight,completed,mean_latency"


def test_simulate_wireless_static(runner, triangle_file, schedules_file, tmp_path):
    prefix = str(tmp_path / "w")
    result = runner.invoke(main, [
        "simulate", "--model", "wireless", "--graph", triangle_file,
        "--schedules", schedules_file, "--policy", "static-sss",
        "--lambda", "0.3", "--seed", "5", "--horizon", "3000",
        "--sample-every", "5", "--out-prefix", prefix,
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "w.json").read_text())
    assert summary["verdict"] == "stable"
    header = (tmp_path / "w.csv").read_text().splitlines()[0]
    assert header.startswith("slot,total_useful,total_nonuseful,V,completed,mean_latency")


def test_simulate_requires_seed(runner, triangle_file):
    result = runner.invoke(main, [
        "simulate", "--model", "wireline", "--graph", triangle_file,
        "--lambda", "0.5", "--horizon", "100",
    ])
    assert result.exit_code != 0


def test_sweep_command(runner, triangle_file, tmp_path):
    cfg = {
        "model": "wireline",
        "graph": triangle_file,
        "lambdas": [0.5, 1.5],
        "seeds": [1],
        "horizon": 2000.0,
        "sample_every": 5.0,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    result = runner.invoke(main, [
        "sweep", "--config", str(cfg_path), "--output-dir", str(tmp_path / "out"),
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["lambda_hat"] == 0.5
    grid = {entry["lambda"]: entry["stable_all"] for entry in summary["grid"]}
    assert grid == {0.5: True, 1.5: False}


def test_sweep_flag_overrides(runner, triangle_file, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "model": "wireline", "graph": triangle_file,
        "lambdas": [9.9], "seeds": [1], "horizon": 100.0,
    }))
    result = runner.invoke(main, [
        "sweep", "--config", str(cfg_path),
        "--lambdas", "0.5", "--seeds", "7,8", "--horizon", "2000",
        "--sample-every", "5",
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["lambda_hat"] == 0.5
    assert not summary["definitive"]  # fewer than three seeds
    assert set(summary["grid"][0]["verdicts"]) == {"7", "8"}


def test_verify_command(runner):
    result = runner.invoke(main, ["verify", "--suite", "fmux"])
    assert result.exit_code == 0, result.output
    assert "[PASS] fmux.fmux_properties" in result.output
