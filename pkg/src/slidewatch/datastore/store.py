"""File-backed append-only store for processed displacements and alerts.

Layout under the store root::

    stations/<station_id>/<YYYY-MM-DD>.log   displacement records, one UTC day per segment
    alerts/<YYYY-MM-DD>.log                  alert records

Every line is ``<len:08x> <crc32:08x> <json>\\n`` where ``len`` is the byte
length of the JSON text and the checksum is CRC-32 of those bytes.  On
open each segment is scanned and anything after the last valid line is
truncated, so a crash mid-write leaves a store that reopens cleanly with
a committed prefix.
"""

from __future__ import annotations

import bisect
import datetime as dt
import json
import logging
import os
import threading
import zlib
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

from ..outlier import Verdict
from ..pipeline import AlertEvent, Axis, Direction, ProcessedSample

logger = logging.getLogger(__name__)

_AXIS_ORDER = {a: i for i, a in enumerate(Axis)}
_DIRECTION_ORDER = {d: i for i, d in enumerate(Direction)}


class StoreError(RuntimeError):
    pass


class StoreWriteError(StoreError):
    """Raised when a record could not be made durable; ``record`` was not committed."""

    def __init__(self, record, cause: Exception):
        super().__init__(f"failed to append {record!r}: {cause}")
        self.record = record


@dataclass(frozen=True)
class DisplacementRecord:
    station_id: int
    epoch: int  # ms
    axis: Axis
    raw: float  # mm
    filtered: float | None  # mm
    verdict: Verdict

    @property
    def key(self) -> tuple[int, int, Axis]:
        return self.station_id, self.epoch, self.axis

    @property
    def sort_key(self) -> tuple[int, int]:
        return self.epoch, _AXIS_ORDER[self.axis]

    @classmethod
    def from_processed(cls, p: ProcessedSample) -> DisplacementRecord:
        return cls(p.station_id, p.epoch, p.axis, p.raw, p.filtered, p.verdict)

    def to_dict(self) -> dict:
        return {
            "station_id": self.station_id,
            "epoch": self.epoch,
            "axis": self.axis.value,
            "raw": self.raw,
            "filtered": self.filtered,
            "verdict": self.verdict.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DisplacementRecord:
        filtered = d.get("filtered")
        return cls(
            int(d["station_id"]),
            int(d["epoch"]),
            Axis(d["axis"]),
            float(d["raw"]),
            None if filtered is None else float(filtered),
            Verdict(d["verdict"]),
        )


@dataclass(frozen=True)
class AlertRecord:
    station_id: int
    epoch: int  # ms
    direction: Direction
    level: int
    magnitude: float  # mm
    acknowledged: bool = False

    @property
    def key(self) -> tuple[int, int, Direction]:
        return self.station_id, self.epoch, self.direction

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return self.epoch, self.station_id, _DIRECTION_ORDER[self.direction]

    @classmethod
    def from_event(cls, e: AlertEvent) -> AlertRecord:
        return cls(e.station_id, e.epoch, e.direction, e.level, e.magnitude)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = self.direction.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AlertRecord:
        return cls(
            int(d["station_id"]),
            int(d["epoch"]),
            Direction(d["direction"]),
            int(d["level"]),
            float(d["magnitude"]),
            bool(d.get("acknowledged", False)),
        )


@dataclass(frozen=True)
class Position:
    segment: str  # path relative to the store root
    offset: int  # byte offset of the line


def encode_line(doc: dict) -> bytes:
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return b"%08x %08x " % (len(body), zlib.crc32(body)) + body + b"\n"


def read_segment(path: Path) -> tuple[list[tuple[int, dict]], int]:
    """Valid ``(offset, doc)`` lines and the byte length of the valid prefix."""
    data = path.read_bytes()
    out, pos = [], 0
    while pos < len(data):
        header = data[pos : pos + 18]
        try:
            if len(header) < 18 or header[8:9] != b" " or header[17:18] != b" ":
                break
            length, crc = int(header[:8], 16), int(header[9:17], 16)
        except ValueError:
            break
        start, end = pos + 18, pos + 18 + length
        if end >= len(data) or data[end : end + 1] != b"\n":
            break
        body = data[start:end]
        if zlib.crc32(body) != crc:
            break
        try:
            doc = json.loads(body)
        except ValueError:
            break
        out.append((pos, doc))
        pos = end + 1
    return out, pos


def day_of(epoch_ms: int) -> str:
    return dt.datetime.fromtimestamp(epoch_ms / 1000, tz=dt.timezone.utc).strftime("%Y-%m-%d")


class DisplacementStore:
    """Single writer, many readers.  Reads copy under the lock, so they see a committed prefix."""

    def __init__(self, root: str | os.PathLike, *, fsync: bool = False):
        self.root = Path(root)
        self.fsync = fsync
        self.diagnostics: Counter = Counter()
        self._lock = threading.RLock()
        self._handles: dict[Path, object] = {}
        self._records: dict[int, list[DisplacementRecord]] = {}
        self._sort_keys: dict[int, list[tuple[int, int]]] = {}
        self._positions: dict[tuple, Position] = {}
        self._last_epoch: dict[int, int] = {}
        self._alerts: list[AlertRecord] = []
        self._alert_keys: list[tuple[int, int, int]] = []
        self._alert_positions: dict[tuple, Position] = {}
        (self.root / "stations").mkdir(parents=True, exist_ok=True)
        (self.root / "alerts").mkdir(parents=True, exist_ok=True)
        self._recover()

    # -- recovery ------------------------------------------------------

    def _segments(self) -> Iterator[Path]:
        stations = self.root / "stations"
        for sdir in sorted(stations.iterdir(), key=lambda p: (len(p.name), p.name)):
            yield from sorted(sdir.glob("*.log"))
        yield from sorted((self.root / "alerts").glob("*.log"))

    def _recover(self) -> None:
        for path in self._segments():
            lines, valid = read_segment(path)
            size = path.stat().st_size
            if valid < size:
                logger.warning("truncating %d bytes of torn tail in %s", size - valid, path)
                self.diagnostics["truncated_bytes"] += size - valid
                with open(path, "r+b") as fh:
                    fh.truncate(valid)
            rel = path.relative_to(self.root).as_posix()
            is_alert = path.parent.name == "alerts"
            for offset, doc in lines:
                pos = Position(rel, offset)
                if is_alert:
                    self._index_alert(AlertRecord.from_dict(doc), pos)
                else:
                    self._index(DisplacementRecord.from_dict(doc), pos)
        self.diagnostics["recovered_records"] = sum(len(v) for v in self._records.values())
        self.diagnostics["recovered_alerts"] = len(self._alerts)

    # -- indexing ------------------------------------------------------

    def _index(self, rec: DisplacementRecord, pos: Position) -> None:
        recs = self._records.setdefault(rec.station_id, [])
        keys = self._sort_keys.setdefault(rec.station_id, [])
        i = bisect.bisect_right(keys, rec.sort_key)
        keys.insert(i, rec.sort_key)
        recs.insert(i, rec)
        self._positions[rec.key] = pos
        last = self._last_epoch.get(rec.station_id)
        self._last_epoch[rec.station_id] = rec.epoch if last is None else max(last, rec.epoch)

    def _index_alert(self, rec: AlertRecord, pos: Position) -> None:
        i = bisect.bisect_right(self._alert_keys, rec.sort_key)
        self._alert_keys.insert(i, rec.sort_key)
        self._alerts.insert(i, rec)
        self._alert_positions[rec.key] = pos

    # -- writing -------------------------------------------------------

    def _write(self, path: Path, record, doc: dict) -> Position:
        line = encode_line(doc)
        try:
            fh = self._handles.get(path)
            if fh is None:
                path.parent.mkdir(parents=True, exist_ok=True)
                fh = self._handles[path] = open(path, "ab")
            offset = fh.tell()
            fh.write(line)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        except OSError as exc:
            self._handles.pop(path, None)
            raise StoreWriteError(record, exc) from exc
        return Position(path.relative_to(self.root).as_posix(), offset)

    def append(self, record: DisplacementRecord) -> Position:
        """Commit ``record``; a repeated key is a no-op returning the original position."""
        with self._lock:
            existing = self._positions.get(record.key)
            if existing is not None:
                self.diagnostics["duplicate_appends"] += 1
                return existing
            last = self._last_epoch.get(record.station_id)
            if last is not None and record.epoch < last:
                self.diagnostics["out_of_order_appends"] += 1
            path = self.root / "stations" / str(record.station_id) / f"{day_of(record.epoch)}.log"
            pos = self._write(path, record, record.to_dict())
            self._index(record, pos)
            return pos

    def append_alert(self, alert: AlertRecord) -> Position:
        with self._lock:
            existing = self._alert_positions.get(alert.key)
            if existing is not None:
                self.diagnostics["duplicate_alerts"] += 1
                return existing
            path = self.root / "alerts" / f"{day_of(alert.epoch)}.log"
            pos = self._write(path, alert, alert.to_dict())
            self._index_alert(alert, pos)
            return pos

    def close(self) -> None:
        with self._lock:
            for fh in self._handles.values():
                fh.close()
            self._handles.clear()

    def __enter__(self) -> DisplacementStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- reading -------------------------------------------------------

    def stations(self) -> list[int]:
        with self._lock:
            return sorted(s for s, recs in self._records.items() if recs)

    def query_range(self, station_id: int, from_ms: int, to_ms: int) -> list[DisplacementRecord]:
        """Records with ``from_ms <= epoch <= to_ms``, ascending epoch then axis."""
        if from_ms > to_ms:
            raise ValueError(f"from ({from_ms}) is after to ({to_ms})")
        with self._lock:
            keys = self._sort_keys.get(station_id)
            if not keys:
                return []
            lo = bisect.bisect_left(keys, (from_ms, -1))
            hi = bisect.bisect_right(keys, (to_ms, len(_AXIS_ORDER)))
            return self._records[station_id][lo:hi]

    def all_records(self, station_id: int) -> list[DisplacementRecord]:
        with self._lock:
            return list(self._records.get(station_id, ()))

    def latest(self, station_id: int) -> list[DisplacementRecord]:
        """Records at the station's latest epoch; empty when nothing is stored."""
        with self._lock:
            recs = self._records.get(station_id)
            if not recs:
                return []
            epoch = recs[-1].epoch
            return self.query_range(station_id, epoch, epoch)

    def alerts_since(self, since_ms: int = 0) -> list[AlertRecord]:
        with self._lock:
            lo = bisect.bisect_left(self._alert_keys, (since_ms, -1, -1))
            return self._alerts[lo:]

    def position_of(self, key: tuple) -> Position | None:
        with self._lock:
            return self._positions.get(key)

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._records.values())
