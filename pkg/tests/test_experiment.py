import csv
import json

import numpy as np
import pytest

from slidewatch.datastore import DisplacementStore
from slidewatch.experiment import (
    DataError,
    error_stats,
    process_rows,
    read_displacement_csv,
    replay,
    report,
    run_mode,
    simulate,
)
from slidewatch.lowpass import design_from_spec, settling_samples
from slidewatch.scenario import loads_scenario
from slidewatch.transport import LinkSimConfig

QUIET = "duration_s: 60\nnoise: {displacement_mm: 0}\nspikes: {rate: 0}\n"
STEP = "duration_s: 120\nsteps: [{at_s: 60, up: 10}]\nspikes: {rate: 0.01, min_mm: 50, max_mm: 50}\n"


@pytest.fixture(scope="module")
def step_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("step")
    scenario = loads_scenario(STEP)
    return scenario, out, simulate(scenario, out)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_error_stats():
    assert error_stats(np.array([3.0, -4.0])) == {"n": 2, "max": 4.0, "min": 3.0, "rms": pytest.approx(np.sqrt(12.5))}
    assert error_stats(np.array([]))["max"] is None


def test_quiet_scenario_filters_to_zero(tmp_path):
    summary = simulate(loads_scenario(QUIET), tmp_path)
    for mode in ("gps", "gnss"):
        with DisplacementStore(tmp_path / mode / "store") as store:
            records = store.all_records(1)
        assert len(records) == 900
        assert max(abs(r.filtered) for r in records) <= 1e-6
        assert summary["modes"][mode]["alerts"] == []


def test_step_confirms_and_raises_l1(step_run):
    scenario, _, summary = step_run
    for mode in ("gps", "gnss"):
        s = summary["modes"][mode]
        ups = [c for c in s["confirmations"] if c["axis"] == "up"]
        assert ups and ups[0]["epoch"] >= scenario.breakpoints_ms()[0]
        assert ["vertical", 1] in s["alert_levels"]
        assert s["verdicts"]["up"]["gross_error"] > 0
        # uplink was lossy, yet every processed record landed exactly once
        assert s["stored_records"] == 3 * scenario.n_epochs
        assert s["transport"]["uplink"]["receiver"]["accepted"] == s["transport"]["uplink"]["messages"]


def test_simulate_is_byte_identical(tmp_path, step_run):
    scenario, out, _ = step_run
    simulate(scenario, tmp_path)
    for name in ("summary.json", "truth.csv", "dop.csv", "gps/frames.bin"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_summary_dop_ordering(step_run):
    comparison = step_run[2]["dop_comparison"]
    assert comparison["combined_le_gps_every_epoch"] and comparison["violations"] == 0
    assert comparison["epochs"] == step_run[0].n_epochs


def test_report_recomputes_from_series(step_run, tmp_path):
    scenario, out, summary = step_run
    doc = report(out, tmp_path)
    assert doc["notice"] is None
    table = read_csv(tmp_path / "summary_table.csv")
    assert len(table) == 2 * 3 * 2
    for row in table:
        series = read_csv(tmp_path / f"series_{row['constellation']}_{row['station_id']}_{row['axis']}.csv")
        col = "raw_mm" if row["series"] == "raw" else "filtered_mm"
        err = np.array([float(r[col]) - float(r["truth_mm"]) for r in series if r[col] != ""])
        assert int(row["n"]) == err.size
        assert float(row["max"]) == pytest.approx(np.abs(err).max(), rel=1e-12)
        assert float(row["min"]) == pytest.approx(np.abs(err).min(), abs=1e-12)
        assert float(row["rms"]) == pytest.approx(np.sqrt(np.mean(err**2)), rel=1e-12)
        # and agrees with the simulate summary
        expected = summary["modes"][row["constellation"]]["errors"][row["axis"]][row["series"]]
        assert float(row["rms"]) == pytest.approx(expected["rms"], rel=1e-12)
    dop = read_csv(tmp_path / "dop_comparison.csv")
    assert dop and all(r["combined_le_gps"] == "1" for r in dop)


def test_report_breakpoints_within_settling(step_run, tmp_path):
    scenario, out, _ = step_run
    report(out, tmp_path)
    filt = design_from_spec(scenario.design_spec)
    settle_ms = settling_samples(filt) * 1000 / scenario.rate_hz
    series = read_csv(tmp_path / "series_gnss_1_up.csv")
    (bp,) = scenario.breakpoints_ms()
    crossing = next(int(r["epoch_ms"]) for r in series if r["filtered_mm"] and int(r["epoch_ms"]) >= bp
                    and float(r["filtered_mm"]) > 5.0)
    assert bp <= crossing <= bp + settle_ms


def test_report_without_truth(step_run, tmp_path):
    _, out, _ = step_run
    doc = report(out / "gps" / "store", tmp_path)
    assert "truth" in doc["notice"]
    assert {r["basis"] for r in doc["rows"]} == {"value"}


def test_report_empty_store(tmp_path):
    DisplacementStore(tmp_path / "s").close()
    doc = report(tmp_path / "s", tmp_path / "r")
    assert doc["rows"] == [] and doc["series_files"] == []
    assert read_csv(tmp_path / "r" / "summary_table.csv") == []


def test_report_missing_directory(tmp_path):
    with pytest.raises(DataError):
        report(tmp_path / "nope", tmp_path / "r")


def test_fast_path_matches_transport_path():
    scenario = loads_scenario("duration_s: 40\nlink: {uplink: {loss_prob: 0.2}}\n")
    a = run_mode(scenario, "gnss", transport=False)
    b = run_mode(scenario, "gnss", transport=True)
    assert a.records == b.records and a.alerts == b.alerts


def test_process_rows_and_csv(tmp_path):
    path = tmp_path / "in.csv"
    rng = np.random.default_rng(1)
    lines = ["epoch_ms,east_mm,north_mm,up_mm"]
    for i in range(200):
        e = 60.0 if i == 150 else rng.normal(0, 1)
        lines.append(f"{i * 200},{e},{rng.normal(0, 1)},{rng.normal(0, 1)}")
    path.write_text("\n".join(lines) + "\n")
    rows = read_displacement_csv(path)
    out = process_rows(rows)
    assert len(out) == 600
    assert out[150 * 3][3] == "gross_error" and out[150 * 3][4] is None
    path.write_text("0,1,2\n")
    with pytest.raises(DataError):
        read_displacement_csv(path)
    with pytest.raises(DataError):
        process_rows([(5, 0, 0, 0), (5, 0, 0, 0)])


def test_replay(step_run, tmp_path):
    scenario, out, summary = step_run
    link = LinkSimConfig(loss_prob=0.05, duplicate_prob=0.1, reorder_window=3, corrupt_prob=0.02, seed=4)
    doc = replay(out / "gnss" / "frames.bin", tmp_path, link, scenario)
    assert doc["frames_in"] == scenario.n_epochs
    assert doc["assembler"]["BadCrc"] == doc["link"]["corrupted"]
    assert doc["frames_released"] < doc["frames_in"]
    again = replay(out / "gnss" / "frames.bin", tmp_path / "again", link, scenario)
    assert json.dumps(again, sort_keys=True) == json.dumps(doc, sort_keys=True)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 31)
    with pytest.raises(DataError):
        replay(bad, tmp_path / "x", link)
