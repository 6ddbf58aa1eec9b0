import csv
import json
import socket
import subprocess
import sys
import time
import urllib.request

import pytest

from slidewatch.cli import main

QUIET = "duration_s: 20\nnoise: {displacement_mm: 1}\nspikes: {rate: 0}\n"


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(QUIET)
    return path


def test_usage_errors_exit_1(capsys):
    assert_exit(1, [])
    assert_exit(1, ["simulate"])
    assert_exit(1, ["nonsense"])
    assert_exit(1, ["design-filter", "--order", "x"])


def assert_exit(code, argv):
    try:
        result = main(argv)
    except SystemExit as exc:
        result = exc.code
    assert result == code


def test_simulate_and_report(tmp_path, scenario_file, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    first = (out / "summary.json").read_bytes()
    assert main(["simulate", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    assert (out / "summary.json").read_bytes() == first
    assert main(["simulate", "--scenario", str(scenario_file), "--out", str(tmp_path / "s2"), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "s2" / "summary.json").read_text())["scenario"]["seed"] == 3
    assert main(["report", "--store", str(out), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary_table.csv").is_file()
    assert "summary written" in capsys.readouterr().out


def test_bad_scenario_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nrate_hz: fast\n")
    assert main(["simulate", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.yaml:2" in capsys.readouterr().err
    assert main(["simulate", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_design_filter(tmp_path, capsys):
    assert main(["design-filter"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["order"] == 5 and doc["dc_gain"] == pytest.approx(1.0, abs=1e-12)
    assert abs(doc["analog_gain_at_2wc"] - 0.0312) <= 0.002
    table = tmp_path / "gain.csv"
    assert main(["design-filter", "--order", "3", "--out", str(tmp_path / "f.json"), "--table", str(table)]) == 0
    rows = list(csv.DictReader(table.open()))
    assert len(rows) == 101 and float(rows[0]["digital_gain"]) == pytest.approx(1.0)
    assert json.loads((tmp_path / "f.json").read_text())["order"] == 3
    assert main(["design-filter", "--cutoff", "9"]) == 2
    assert main(["design-filter", "--table", str(table), "--table-points", "0"]) == 2


def test_process(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("epoch_ms,east,north,up\n" + "".join(f"{i * 200},{i % 3 * 0.1},0,0\n" for i in range(100)))
    out = tmp_path / "out.csv"
    assert main(["process", "--input", str(src), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 300 and rows[0]["verdict"] == "accept"
    assert main(["process", "--input", str(tmp_path / "absent.csv"), "--out", str(out)]) == 2


def test_replay(tmp_path, scenario_file, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--scenario", str(scenario_file), "--out", str(sim)]) == 0
    capsys.readouterr()
    frames = sim / "gps" / "frames.bin"
    args = ["replay", "--frames", str(frames), "--out", str(tmp_path / "r"), "--loss-prob", "0.1", "--seed", "2"]
    assert main(args) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["frames_in"] == 100 and doc["link"]["lost"] > 0
    assert main(["replay", "--frames", str(frames), "--out", str(tmp_path / "r2"), "--loss-prob", "2"]) == 2
    (tmp_path / "short.bin").write_bytes(frames.read_bytes()[:45])
    assert main(["replay", "--frames", str(tmp_path / "short.bin"), "--out", str(tmp_path / "r3")]) == 2


def test_report_errors(tmp_path):
    assert main(["report", "--store", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 2


def test_serve_missing_store(tmp_path):
    assert main(["serve", "--store", str(tmp_path / "none")]) == 2
    (tmp_path / "s").mkdir()
    assert main(["serve", "--store", str(tmp_path / "s"), "--bind", "bogus"]) == 2


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_subprocess(tmp_path, scenario_file):
    sim = tmp_path / "sim"
    assert main(["simulate", "--scenario", str(scenario_file), "--out", str(sim)]) == 0
    port = _free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "slidewatch", "serve", "--store", str(sim / "gnss" / "store"), "--bind", f"127.0.0.1:{port}"],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    try:
        deadline = time.time() + 10
        while True:
            try:
                with urllib.request.urlopen(f"http://127.0.0.1:{port}/api/stations/1/latest") as resp:
                    doc = json.loads(resp.read())
                break
            except OSError:
                if time.time() > deadline or proc.poll() is not None:
                    raise
                time.sleep(0.1)
        assert doc["units"]["filtered"] == "mm" and len(doc["records"]) == 3
    finally:
        proc.terminate()
        proc.wait(timeout=10)
