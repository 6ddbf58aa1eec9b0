import math

import numpy as np
import pytest

from slidewatch.gnss import EnuDisplacement
from slidewatch.outlier import Verdict
from slidewatch.pipeline import (
    AlertLatch,
    Axis,
    Direction,
    FixQuality,
    MonitoringSample,
    ProcessedSample,
    StationPipeline,
    WarningConfig,
    evaluate_warning,
    warning_level,
)

THRESHOLDS = (10.0, 20.0, 30.0)


def run(pipeline, enu_rows, start=0, step=200):
    results = []
    for i, (e, n, u) in enumerate(enu_rows):
        results.append(pipeline.process(MonitoringSample(pipeline.station_id, start + i * step, EnuDisplacement(e, n, u))))
    return results


class TestWarnings:
    def test_levels(self):
        assert warning_level(4.0, THRESHOLDS) == 0
        assert warning_level(25.0, THRESHOLDS) == 2
        assert warning_level(10.0, THRESHOLDS) == 1
        assert warning_level(35.0, THRESHOLDS) == 3

    def test_config_validation(self):
        for bad in [(10, 5, 30), (0, 1, 2), (1, 2)]:
            with pytest.raises(ValueError):
                WarningConfig(horizontal_thresholds=bad)
        with pytest.raises(ValueError):
            WarningConfig(hysteresis=1.0)

    def test_edge_triggered_with_hysteresis(self):
        latch = AlertLatch(THRESHOLDS)
        trace = [latch.update(m)[1] for m in [5, 10, 12, 9.5, 11, 8.9, 10, 21, 35, 31, 25]]
        # 9.5 is inside the 10% band so 11 does not re-fire; 8.9 re-arms L1
        assert trace == [None, 1, None, None, None, None, 1, 2, 3, None, None]

    def test_levels_non_decreasing_within_burst(self):
        latch = AlertLatch(THRESHOLDS)
        fired = [latch.update(m)[1] for m in np.linspace(0, 40, 200)]
        levels = [f for f in fired if f is not None]
        assert levels == [1, 2, 3]

    def test_evaluate_warning_uses_abs_vertical(self):
        latches = {}
        levels, events = evaluate_warning(3.0, -22.0, WarningConfig(), latches, station_id=4, epoch=99)
        assert levels == {Direction.HORIZONTAL: 0, Direction.VERTICAL: 2}
        assert [(e.direction, e.level, e.station_id, e.epoch) for e in events] == [(Direction.VERTICAL, 2, 4, 99)]


class TestPipeline:
    def test_quiet_stream_no_alerts(self, rng):
        p = StationPipeline(1)
        results = run(p, rng.normal(0, 1.0, (3000, 3)))
        assert sum(len(r.alerts) for r in results) == 0

    def test_spike_is_gross_error_without_alert(self, rng):
        p = StationPipeline(1)
        rows = rng.normal(0, 1.0, (400, 3))
        rows[300, 0] += 50.0
        results = run(p, rows)
        east = [r.processed[0] for r in results]
        assert east[300].verdict is Verdict.GROSS_ERROR and east[300].filtered is None
        assert sum(len(r.alerts) for r in results) == 0
        # filtered output stays continuous across the rejected epoch
        assert abs(east[301].filtered - east[299].filtered) < 1.0

    def test_up_step_confirms_and_fires_one_l1(self, rng):
        p = StationPipeline(1)
        rows = rng.normal(0, 0.5, (1200, 3))
        rows[400:, 2] += 10.0
        results = run(p, rows)
        up = [r.processed[2] for r in results]
        assert any(s.verdict is Verdict.DEFORMATION_CONFIRMED for s in up[400:410])
        alerts = [a for r in results for a in r.alerts]
        assert [(a.direction, a.level) for a in alerts] == [(Direction.VERTICAL, 1)]
        assert alerts[0].epoch >= 400 * 200

    def test_deterministic(self, rng):
        rows = rng.normal(0, 3.0, (800, 3))
        rows[rng.random((800, 3)) < 0.02] += 40
        rows[500:, 1] += 12
        a = run(StationPipeline(2), rows)
        b = run(StationPipeline(2), rows)
        assert [(r.processed, r.alerts) for r in a] == [(r.processed, r.alerts) for r in b]

    def test_out_of_order_and_fix_quality(self):
        p = StationPipeline(1)
        zero = EnuDisplacement(0, 0, 0)
        assert p.process(MonitoringSample(1, 1000, zero)) is not None
        assert p.process(MonitoringSample(1, 1000, zero)) is None
        assert p.process(MonitoringSample(1, 800, zero)) is None
        assert p.process(MonitoringSample(1, 1200, zero, FixQuality.FLOAT)) is None
        assert p.process(MonitoringSample(1, 1400, zero, FixQuality.NONE)) is None
        assert p.diagnostics["out_of_order"] == 2
        assert p.diagnostics["skipped_float"] == 1 and p.diagnostics["skipped_none"] == 1
        with pytest.raises(ValueError):
            p.process(MonitoringSample(9, 2000, zero))

    def test_processed_sample_invariant(self):
        with pytest.raises(ValueError):
            ProcessedSample(1, 0, Axis.EAST, 1.0, Verdict.GROSS_ERROR, 1.0)
        with pytest.raises(ValueError):
            ProcessedSample(1, 0, Axis.EAST, 1.0, Verdict.ACCEPT, None)

    def test_error_reduction_over_five_minute_windows(self, rng):
        n = 3000  # 10 minutes at 5 Hz
        truth = np.zeros((n, 3))
        truth[1500:, 2] = 10.0
        raw = truth + rng.normal(0, 3.0, (n, 3))
        spikes = rng.random((n, 3)) < 0.01
        raw[spikes] += rng.choice([-1, 1], spikes.sum()) * rng.uniform(25, 50, spikes.sum())
        results = run(StationPipeline(1), raw)
        for start in (0, 1500):
            window = range(start, start + 1500)
            for ax in range(3):
                raw_err = np.array([raw[i, ax] - truth[i, ax] for i in window])
                filt_err = np.array(
                    [results[i].processed[ax].filtered - truth[i, ax] for i in window if results[i].processed[ax].filtered is not None]
                )
                assert np.sqrt(np.mean(filt_err**2)) < np.sqrt(np.mean(raw_err**2))
                assert np.max(np.abs(filt_err)) <= np.max(np.abs(raw_err))

    def test_horizontal_alert_from_east_and_north(self):
        p = StationPipeline(1)
        rows = np.zeros((600, 3))
        rows[300:, 0] = 8.0
        rows[300:, 1] = 8.0  # horizontal magnitude 11.3 mm
        rows += np.random.default_rng(5).normal(0, 0.3, rows.shape)
        alerts = [a for r in run(p, rows) for a in r.alerts]
        assert [(a.direction, a.level) for a in alerts] == [(Direction.HORIZONTAL, 1)]
        assert alerts[0].magnitude == pytest.approx(math.hypot(8, 8) * 10 / 11.3137, rel=0.2)
