"""End-to-end experiment harness: synthesis, transport, processing, storage, reporting.

``simulate`` runs, for each constellation mode of a scenario::

    RTK synthesis -> solved displacement + noise + spikes -> station frames
    -> station link -> frame assembler -> edge pipeline -> uplink -> store

and writes ``summary.json`` (sorted keys, no wall-clock content), the
truth timeline, the DOP series and one store per mode.  ``report`` turns
a simulation directory (or a bare store) into plot-ready series files
and error tables.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import shutil
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datastore import AlertRecord, DisplacementRecord, DisplacementStore
from .gnss.constellation import PseudoAlmanac
from .gnss.dop import dop_batch
from .gnss.geodesy import enu_rotation, geodetic_to_ecef
from .gnss.rtk import RtkSimulator
from .gnss.types import EnuDisplacement
from .lowpass import DigitalFilter, FilterStream, design_from_spec
from .outlier import ClassifierConfig, TimeSliceClassifier, Verdict
from .pipeline import AxisChannel, Axis, FixQuality, MonitoringSample, StationPipeline
from .scenario import MODES, ExperimentScenario
from .transport import (
    FrameAssembler,
    FrameError,
    LinkSimConfig,
    LossyLink,
    StationFrame,
    decode_frame,
    encode_frame,
    iter_frames,
    run_uplink,
)

logger = logging.getLogger(__name__)

AXES = tuple(Axis)
DOP_KEYS = ("gdop", "pdop", "hdop", "vdop", "tdop")
SUMMARY_NAME = "summary.json"
TRUTH_NAME = "truth.csv"
DOP_NAME = "dop.csv"
FRAMES_NAME = "frames.bin"

# Independent random streams, so that changing one noise source leaves the others intact.
_STREAM_DISPLACEMENT = 1
_STREAM_SPIKES = 2
_STREAM_PHASE = 3


class DataError(RuntimeError):
    """Input data is missing or malformed (CLI exit status 2)."""


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


@dataclass
class MeasurementSeries:
    epochs: np.ndarray  # (E,) ms
    truth: np.ndarray  # (E, 3) mm
    solved: np.ndarray  # (E, 3) mm, RTK output (NaN where unsolved)
    raw: np.ndarray  # (E, 3) mm, solved + environment noise + spikes
    spikes: np.ndarray  # (E, 3) bool
    dop: dict[str, np.ndarray]

    @property
    def ok(self) -> np.ndarray:
        return np.all(np.isfinite(self.solved), axis=1)


def station_positions(scenario: ExperimentScenario) -> tuple[np.ndarray, np.ndarray]:
    reference = geodetic_to_ecef(scenario.reference_lat_deg, scenario.reference_lon_deg, scenario.reference_height_m)
    monitor = reference + enu_rotation(reference).T @ np.asarray(scenario.baseline_enu_m)
    return reference, monitor


def environment_noise(scenario: ExperimentScenario, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Additive noise and spike series (mode independent, so modes share them)."""
    noise = _rng(scenario.seed, _STREAM_DISPLACEMENT).normal(0.0, 1.0, (n, 3)) * scenario.displacement_noise_mm
    rng = _rng(scenario.seed, _STREAM_SPIKES)
    mask = rng.random((n, 3)) < scenario.spikes.rate
    size = rng.uniform(scenario.spikes.min_mm, scenario.spikes.max_mm, (n, 3))
    sign = np.where(rng.random((n, 3)) < 0.5, -1.0, 1.0)
    return noise + np.where(mask, sign * size, 0.0), mask


def synthesize(scenario: ExperimentScenario, mode: str) -> MeasurementSeries:
    reference, monitor = station_positions(scenario)
    almanac = PseudoAlmanac(seed=scenario.seed)
    sim = RtkSimulator(
        almanac,
        reference,
        monitor,
        phase_sigma=scenario.phase_noise_cycles,
        elevation_mask_deg=scenario.elevation_mask_deg,
        seed=scenario.seed * 1000 + _STREAM_PHASE,
        constellations=MODES[mode],
    )
    epochs = scenario.epochs()
    truth = scenario.truth_mm(epochs)
    monitor_true = monitor + (truth / 1000.0) @ enu_rotation(monitor)
    block = sim.observe(epochs, monitor_true)
    solution = sim.solve_block(block)
    extra, spikes = environment_noise(scenario, len(epochs))
    dop = dop_batch(block.sat_xyz, reference, block.visible)
    return MeasurementSeries(epochs, truth, solution.displacement_mm, solution.displacement_mm + extra, spikes, dop)


def error_stats(err: np.ndarray) -> dict:
    """max |e|, min |e| and RMS of e; all None for an empty series."""
    err = np.asarray(err, dtype=float)
    if err.size == 0:
        return {"n": 0, "max": None, "min": None, "rms": None}
    a = np.abs(err)
    return {"n": int(err.size), "max": float(a.max()), "min": float(a.min()), "rms": float(np.sqrt(np.mean(err * err)))}


def record_errors(records: Sequence[DisplacementRecord], truth: dict[int, tuple[float, float, float]]) -> dict:
    out = {}
    for i, axis in enumerate(AXES):
        recs = [r for r in records if r.axis is axis and r.epoch in truth]
        raw = np.array([r.raw - truth[r.epoch][i] for r in recs])
        filt = np.array([r.filtered - truth[r.epoch][i] for r in recs if r.filtered is not None])
        out[axis.value] = {"raw": error_stats(raw), "filtered": error_stats(filt)}
    return out


def _summary_dop(dop: dict[str, np.ndarray]) -> dict:
    out = {}
    for key in DOP_KEYS:
        v = dop[key][np.isfinite(dop[key])]
        out[key] = {
            "min": float(v.min()) if v.size else None,
            "max": float(v.max()) if v.size else None,
            "mean": float(v.mean()) if v.size else None,
        }
    out["gdop_series"] = [None if not math.isfinite(x) else float(x) for x in dop["gdop"]]
    out["n_sats_min"] = int(dop["n_sats"].min()) if dop["n_sats"].size else 0
    return out


@dataclass
class ModeResult:
    mode: str
    series: MeasurementSeries
    records: list[DisplacementRecord]
    alerts: list[AlertRecord]
    confirmations: list[tuple[int, str]]  # (epoch, axis)
    summary: dict = field(default_factory=dict)


def make_frames(scenario: ExperimentScenario, series: MeasurementSeries) -> list[StationFrame]:
    frames = []
    for i, epoch in enumerate(series.epochs):
        ok = bool(series.ok[i])
        e, n, u = series.raw[i] if ok else (0.0, 0.0, 0.0)
        fix = FixQuality.FIXED if ok else FixQuality.NONE
        frames.append(StationFrame.from_mm(scenario.station_id, i, int(epoch), e, n, u, fix.value))
    return frames


def station_link(frames: Sequence[bytes], epochs: Sequence[int], origin: int, config: LinkSimConfig, hold: int):
    """Send frames at their epoch times; returns frames released by the assembler, and both objects."""
    link = LossyLink(config)
    assembler = FrameAssembler(hold=hold)
    released: list[StationFrame] = []
    for data, epoch in zip(frames, epochs):
        now = (epoch - origin) / 1000.0
        for chunk in link.poll(now):
            released.extend(assembler.push(chunk))
        link.send(now, data)
    for chunk in link.drain():
        released.extend(assembler.push(chunk))
    released.extend(assembler.flush())
    return released, link, assembler


def frame_to_sample(frame: StationFrame) -> MonitoringSample:
    return MonitoringSample(
        frame.station_id, frame.epoch, EnuDisplacement(*frame.displacement_mm), FixQuality(frame.fix_quality)
    )


def run_pipeline(pipeline: StationPipeline, frames: Iterable[StationFrame]):
    """Feed frames through ``pipeline``; returns (records, alerts, confirmations)."""
    records: list[DisplacementRecord] = []
    alerts: list[AlertRecord] = []
    confirmations: list[tuple[int, str]] = []
    for frame in frames:
        result = pipeline.process(frame_to_sample(frame))
        if result is None:
            continue
        for p in result.processed:
            records.append(DisplacementRecord.from_processed(p))
            if p.verdict is Verdict.DEFORMATION_CONFIRMED:
                confirmations.append((p.epoch, p.axis.value))
        alerts.extend(AlertRecord.from_event(a) for a in result.alerts)
    return records, alerts, confirmations


def uplink_to_store(
    station_id: int,
    records: Sequence[DisplacementRecord],
    alerts: Sequence[AlertRecord],
    config: LinkSimConfig,
    store: DisplacementStore,
    site: str,
):
    """Ship records and alerts through the lossy uplink into ``store`` in epoch order."""
    items = [(r.epoch, 0, r.to_dict(), "displacement") for r in records]
    items += [(a.epoch, 1, a.to_dict(), "alert") for a in alerts]
    items.sort(key=lambda x: (x[0], x[1]))
    messages = [(station_id, {**doc, "kind": kind, "seq": seq}) for seq, (_, _, doc, kind) in enumerate(items)]

    def sink(payload: dict) -> None:
        if payload["kind"] == "alert":
            store.append_alert(AlertRecord.from_dict(payload))
        else:
            store.append(DisplacementRecord.from_dict(payload))

    return run_uplink(messages, config, site=site, sink=sink)


def _fresh_store_dir(path: Path) -> Path:
    if (path / "stations").is_dir():
        # generated output: a rerun replaces it rather than appending duplicates
        logger.info("replacing previous store %s", path)
        shutil.rmtree(path)
    return path


def run_mode(
    scenario: ExperimentScenario, mode: str, out_dir: Path | None = None, *, transport: bool = True
) -> ModeResult:
    """One constellation mode through the chain.

    With ``transport=False`` the frames go straight from station to
    pipeline and nothing is stored (used for quick statistical checks).
    """
    series = synthesize(scenario, mode)
    frames = make_frames(scenario, series)
    encoded = [encode_frame(f) for f in frames]
    pipeline = StationPipeline(
        scenario.station_id, scenario.classifier, design_from_spec(scenario.design_spec), scenario.warning
    )
    truth = {int(e): tuple(float(v) for v in t) for e, t in zip(series.epochs, series.truth)}
    transport_summary: dict = {}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / FRAMES_NAME).write_bytes(b"".join(encoded))

    if transport:
        hold = scenario.station_link.reorder_window
        released, link, assembler = station_link(
            encoded, series.epochs.tolist(), scenario.epoch_origin_ms, scenario.station_link, hold
        )
        records, alerts, confirmations = run_pipeline(pipeline, released)
        transport_summary["station_link"] = dict(vars(link.stats))
        transport_summary["assembler"] = dict(sorted(assembler.diagnostics.items()))
    else:
        records, alerts, confirmations = run_pipeline(pipeline, frames)

    stored = records
    stored_alerts = alerts
    if transport and out_dir is not None:
        with DisplacementStore(_fresh_store_dir(out_dir / "store")) as store:
            up = uplink_to_store(scenario.station_id, records, alerts, scenario.uplink, store, scenario.site)
            stored = store.all_records(scenario.station_id)
            stored_alerts = store.alerts_since(0)
            transport_summary["uplink"] = {
                "messages": len(records) + len(alerts),
                "transmissions": up.transmissions,
                "delivery_failures": up.delivery_failures,
                "receiver": up.receiver_counts,
            }
            transport_summary["store"] = dict(sorted(store.diagnostics.items()))

    verdicts = {a.value: Counter() for a in AXES}
    for r in stored:
        verdicts[r.axis.value][r.verdict.value] += 1
    summary = {
        "errors": record_errors(stored, truth),
        "verdicts": {a: dict(sorted(c.items())) for a, c in verdicts.items()},
        "confirmations": [{"epoch": e, "axis": a} for e, a in confirmations],
        "alerts": [a.to_dict() for a in stored_alerts],
        "alert_levels": [list(t) for t in sorted({(a.direction.value, a.level) for a in stored_alerts})],
        "dop": _summary_dop(series.dop),
        "pipeline": dict(sorted(pipeline.diagnostics.items())),
        "stored_records": len(stored),
        "unsolved_epochs": int((~series.ok).sum()),
        "transport": transport_summary,
    }
    return ModeResult(mode, series, stored, stored_alerts, confirmations, summary)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if not math.isfinite(x) else repr(x)
    return str(x)


def dop_comparison(results: dict[str, ModeResult]) -> dict | None:
    if "gps" not in results or "gnss" not in results:
        return None
    g = results["gps"].series.dop["gdop"]
    c = results["gnss"].series.dop["gdop"]
    both = np.isfinite(g) & np.isfinite(c)
    return {
        "epochs": int(both.sum()),
        "combined_le_gps_every_epoch": bool(np.all(c[both] <= g[both])),
        "violations": int(np.sum(c[both] > g[both])),
        "gdop_gps_mean": float(g[both].mean()) if both.any() else None,
        "gdop_gnss_mean": float(c[both].mean()) if both.any() else None,
        "gdop_gps_max": float(g[both].max()) if both.any() else None,
        "gdop_gnss_max": float(c[both].max()) if both.any() else None,
    }


def simulate(scenario: ExperimentScenario, out: str | Path) -> dict:
    """Run every mode of ``scenario`` into ``out``; returns the summary document."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for mode in scenario.constellations:
        logger.info("simulating mode %s", mode)
        results[mode] = run_mode(scenario, mode, out / mode)

    first = next(iter(results.values())).series
    _write_csv(
        out / TRUTH_NAME,
        ("epoch_ms", "east_mm", "north_mm", "up_mm"),
        ((int(e), *map(_fmt, map(float, t))) for e, t in zip(first.epochs, first.truth)),
    )
    header = ["epoch_ms"] + [f"{m}_{k}" for m in results for k in (*DOP_KEYS, "n_sats")]
    rows = []
    for i, epoch in enumerate(first.epochs):
        row = [int(epoch)]
        for r in results.values():
            row += [_fmt(float(r.series.dop[k][i])) for k in DOP_KEYS] + [int(r.series.dop["n_sats"][i])]
        rows.append(row)
    _write_csv(out / DOP_NAME, header, rows)

    summary = {
        "scenario": scenario.to_dict(),
        "breakpoints_ms": scenario.breakpoints_ms(),
        "modes": {m: r.summary for m, r in results.items()},
        "dop_comparison": dop_comparison(results),
        "files": {
            "truth": TRUTH_NAME,
            "dop": DOP_NAME,
            "stores": {m: f"{m}/store" for m in results},
            "frames": {m: f"{m}/{FRAMES_NAME}" for m in results},
        },
    }
    (out / SUMMARY_NAME).write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return summary


# -- offline processing and replay -----------------------------------


def read_displacement_csv(path: Path) -> list[tuple[int, float, float, float]]:
    """Rows of ``epoch_ms,east,north,up`` (mm); a header line is allowed."""
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].startswith("#"):
                    continue
                if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
                    continue
                if len(row) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
                try:
                    epoch = int(row[0])
                    values = tuple(float(v) for v in row[1:])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric field") from None
                if not all(math.isfinite(v) for v in values):
                    raise DataError(f"{path}:{lineno}: non-finite displacement")
                rows.append((epoch, *values))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return rows


def process_rows(
    rows: Sequence[tuple[int, float, float, float]],
    classifier: ClassifierConfig | None = None,
    filt: DigitalFilter | None = None,
) -> list[tuple[int, str, float, str, float | None]]:
    """Gross-error elimination and low-pass only: (epoch, axis, raw, verdict, filtered)."""
    classifier = classifier or ClassifierConfig()
    filt = filt or design_from_spec()
    channels = [AxisChannel(TimeSliceClassifier(classifier), FilterStream(filt)) for _ in AXES]
    out = []
    last = None
    for epoch, *values in rows:
        if last is not None and epoch <= last:
            raise DataError(f"epoch {epoch} does not follow {last}")
        last = epoch
        for axis, channel, v in zip(AXES, channels, values):
            verdict, filtered = channel.process(epoch, v)
            out.append((epoch, axis.value, v, verdict.value, filtered))
    return out


def replay(
    frames_path: Path,
    out: Path,
    link: LinkSimConfig,
    scenario: ExperimentScenario | None = None,
) -> dict:
    """Recorded frames through a fresh link simulation, the edge pipeline and a new store."""
    try:
        data = frames_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {frames_path}: {exc.strerror}") from None
    try:
        chunks = list(iter_frames(data))
    except ValueError as exc:
        raise DataError(f"{frames_path}: {exc}") from None
    scenario = scenario or ExperimentScenario()
    epochs = []
    for i, chunk in enumerate(chunks):
        try:
            epochs.append(decode_frame(chunk).epoch)
        except FrameError as exc:
            raise DataError(f"{frames_path}: frame {i}: {exc}") from None
    origin = epochs[0] if epochs else 0
    released, lnk, assembler = station_link(chunks, epochs, origin, link, link.reorder_window)
    stations = sorted({f.station_id for f in released})
    pipelines = {
        s: StationPipeline(s, scenario.classifier, design_from_spec(scenario.design_spec), scenario.warning)
        for s in stations
    }
    out.mkdir(parents=True, exist_ok=True)
    counts = Counter()
    with DisplacementStore(_fresh_store_dir(out / "store")) as store:
        for s in stations:
            records, alerts, _ = run_pipeline(pipelines[s], (f for f in released if f.station_id == s))
            for r in records:
                store.append(r)
            for a in alerts:
                store.append_alert(a)
            counts["records"] += len(records)
            counts["alerts"] += len(alerts)
    summary = {
        "frames_in": len(chunks),
        "frames_released": len(released),
        "link": dict(vars(lnk.stats)),
        "assembler": dict(sorted(assembler.diagnostics.items())),
        "pipeline": {str(s): dict(sorted(p.diagnostics.items())) for s, p in pipelines.items()},
        "stored": dict(counts),
    }
    (out / "replay_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return summary


# -- reporting --------------------------------------------------------


def read_truth(path: Path) -> dict[int, tuple[float, float, float]]:
    truth = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            try:
                truth[int(row[0])] = (float(row[1]), float(row[2]), float(row[3]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed truth row") from None
    return truth


def _find_stores(root: Path) -> dict[str, Path]:
    if (root / "stations").is_dir():
        return {"store": root}
    found = {}
    for child in sorted(root.iterdir()) if root.is_dir() else ():
        if (child / "store" / "stations").is_dir():
            found[child.name] = child / "store"
    return found


SUMMARY_HEADER = ("constellation", "station_id", "axis", "series", "n", "max", "min", "rms", "basis")


def report(store_root: str | Path, out: str | Path, truth_path: str | Path | None = None) -> dict:
    """Series files, error tables and the DOP comparison for a simulation directory."""
    root = Path(store_root)
    if not root.exists():
        raise DataError(f"no such store directory: {root}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth_file = Path(truth_path) if truth_path is not None else root / TRUTH_NAME
    truth = read_truth(truth_file) if truth_file.is_file() else None
    notice = None
    if truth is None:
        notice = f"truth timeline not found ({truth_file}); statistics describe values, not errors"
        logger.warning(notice)

    table = []
    series_files = []
    for mode, path in _find_stores(root).items():
        store = DisplacementStore(path)
        try:
            for station in store.stations():
                records = store.all_records(station)
                for i, axis in enumerate(AXES):
                    recs = [r for r in records if r.axis is axis]
                    name = f"series_{mode}_{station}_{axis.value}.csv"
                    series_files.append(name)
                    rows = []
                    for r in recs:
                        t = truth.get(r.epoch) if truth is not None else None
                        rows.append((r.epoch, _fmt(t[i] if t else None), _fmt(r.raw), _fmt(r.filtered), r.verdict.value))
                    _write_csv(out / name, ("epoch_ms", "truth_mm", "raw_mm", "filtered_mm", "verdict"), rows)
                    for label in ("raw", "filtered"):
                        vals = []
                        for r in recs:
                            v = r.raw if label == "raw" else r.filtered
                            if v is None:
                                continue
                            if truth is not None:
                                if r.epoch not in truth:
                                    continue
                                v -= truth[r.epoch][i]
                            vals.append(v)
                        s = error_stats(np.array(vals))
                        basis = "error" if truth is not None else "value"
                        table.append((mode, station, axis.value, label, s["n"], s["max"], s["min"], s["rms"], basis))
        finally:
            store.close()
    _write_csv(out / "summary_table.csv", SUMMARY_HEADER, ([_fmt(v) for v in row] for row in table))

    dop = None
    dop_file = root / DOP_NAME
    if dop_file.is_file():
        dop = _report_dop(dop_file, out)
    doc = {
        "notice": notice,
        "series_files": series_files,
        "summary_table": "summary_table.csv",
        "rows": [dict(zip(SUMMARY_HEADER, row)) for row in table],
        "dop_comparison": dop,
    }
    (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return doc


def _report_dop(dop_file: Path, out: Path) -> dict | None:
    with open(dop_file, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "gps_gdop" not in rows[0] or "gnss_gdop" not in rows[0]:
        return None
    comp, violations = [], 0
    for row in rows:
        if not row["gps_gdop"] or not row["gnss_gdop"]:
            continue
        g, c = float(row["gps_gdop"]), float(row["gnss_gdop"])
        violations += c > g
        comp.append((row["epoch_ms"], repr(g), repr(c), int(c <= g)))
    _write_csv(out / "dop_comparison.csv", ("epoch_ms", "gps_gdop", "gnss_gdop", "combined_le_gps"), comp)
    return {"file": "dop_comparison.csv", "epochs": len(comp), "violations": violations}
