"""Edge-node processing: per-axis gross-error classification, smoothing and warnings."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .gnss.types import EnuDisplacement
from .lowpass import DigitalFilter, FilterStream, design_from_spec
from .outlier import ClassifierConfig, Sample, TimeSliceClassifier, Verdict

logger = logging.getLogger(__name__)

HYSTERESIS = 0.10


class FixQuality(Enum):
    NONE = 0
    FIXED = 1
    FLOAT = 2


class Axis(Enum):
    EAST = "east"
    NORTH = "north"
    UP = "up"


class Direction(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class MonitoringSample:
    station_id: int
    epoch: int  # ms
    displacement: EnuDisplacement  # mm
    fix_quality: FixQuality = FixQuality.FIXED


@dataclass(frozen=True)
class ProcessedSample:
    station_id: int
    epoch: int
    axis: Axis
    raw: float  # mm
    verdict: Verdict
    filtered: float | None  # mm; None for gross errors

    def __post_init__(self) -> None:
        if (self.filtered is None) != (self.verdict is Verdict.GROSS_ERROR):
            raise ValueError("filtered must be present unless the verdict is a gross error")


@dataclass(frozen=True)
class WarningConfig:
    horizontal_thresholds: tuple[float, float, float] = (10.0, 20.0, 30.0)
    vertical_thresholds: tuple[float, float, float] = (10.0, 20.0, 30.0)
    hysteresis: float = HYSTERESIS

    def __post_init__(self) -> None:
        for name in ("horizontal_thresholds", "vertical_thresholds"):
            t = tuple(float(v) for v in getattr(self, name))
            if len(t) != 3 or not 0 < t[0] < t[1] < t[2]:
                raise ValueError(f"{name} must be three strictly ascending positive values")
            object.__setattr__(self, name, t)
        if not 0 <= self.hysteresis < 1:
            raise ValueError("hysteresis must lie in [0, 1)")

    def thresholds(self, direction: Direction) -> tuple[float, float, float]:
        return self.horizontal_thresholds if direction is Direction.HORIZONTAL else self.vertical_thresholds


@dataclass(frozen=True)
class AlertEvent:
    station_id: int
    epoch: int
    direction: Direction
    level: int  # 1..3
    magnitude: float  # mm


def warning_level(magnitude: float, thresholds) -> int:
    """Highest level whose threshold the magnitude reaches (inclusive); 0 for none."""
    level = 0
    for i, t in enumerate(thresholds, start=1):
        if magnitude >= t:
            level = i
    return level


@dataclass
class AlertLatch:
    """Edge-triggered level tracking for one direction.

    A level fires when first reached; it re-arms once the magnitude falls
    below (1 - hysteresis) times its threshold.
    """

    thresholds: tuple[float, float, float]
    hysteresis: float = HYSTERESIS
    armed_level: int = 0  # highest level already reported and not yet re-armed

    def update(self, magnitude: float) -> tuple[int, int | None]:
        level = warning_level(magnitude, self.thresholds)
        fired = None
        if level > self.armed_level:
            fired = level
            self.armed_level = level
        while self.armed_level > 0 and magnitude < (1 - self.hysteresis) * self.thresholds[self.armed_level - 1]:
            self.armed_level -= 1
        return level, fired


def evaluate_warning(
    filtered_h: float,
    filtered_v: float,
    config: WarningConfig,
    latches: dict[Direction, AlertLatch],
    *,
    station_id: int = 0,
    epoch: int = 0,
) -> tuple[dict[Direction, int], list[AlertEvent]]:
    """Update both latches in place; return current levels and any new alerts."""
    levels, events = {}, []
    for direction, magnitude in ((Direction.HORIZONTAL, filtered_h), (Direction.VERTICAL, abs(filtered_v))):
        latch = latches.setdefault(direction, AlertLatch(config.thresholds(direction), config.hysteresis))
        levels[direction], fired = latch.update(magnitude)
        if fired is not None:
            events.append(AlertEvent(station_id, epoch, direction, fired, magnitude))
    return levels, events


@dataclass
class AxisChannel:
    classifier: TimeSliceClassifier
    stream: FilterStream
    last_filtered: float = 0.0

    def process(self, epoch: int, value: float) -> tuple[Verdict, float | None]:
        result = self.classifier.classify(Sample(epoch, value))
        if result.verdict is Verdict.GROSS_ERROR:
            # hold-last keeps the filter on a regular sample grid
            self.stream.step(self.last_filtered)
            return result.verdict, None
        if result.reseeded:
            self.stream.reset(level=self.classifier.acc.mean())
        self.last_filtered = self.stream.step(value)
        return result.verdict, self.last_filtered


@dataclass
class EpochResult:
    processed: list[ProcessedSample]
    alerts: list[AlertEvent]
    levels: dict[Direction, int]


@dataclass
class StationPipeline:
    """Processes one station's samples strictly in epoch order."""

    station_id: int
    classifier_config: ClassifierConfig = field(default_factory=ClassifierConfig)
    filter: DigitalFilter = field(default_factory=design_from_spec)
    warning_config: WarningConfig = field(default_factory=WarningConfig)
    diagnostics: Counter = field(default_factory=Counter)

    def __post_init__(self) -> None:
        self.channels = {
            axis: AxisChannel(TimeSliceClassifier(self.classifier_config), FilterStream(self.filter))
            for axis in Axis
        }
        self.latches: dict[Direction, AlertLatch] = {}
        self.last_epoch: int | None = None

    def process(self, sample: MonitoringSample) -> EpochResult | None:
        """Classify, filter and evaluate warnings; ``None`` when the sample is skipped."""
        if sample.station_id != self.station_id:
            raise ValueError(f"sample for station {sample.station_id} sent to {self.station_id}")
        if self.last_epoch is not None and sample.epoch <= self.last_epoch:
            self.diagnostics["out_of_order"] += 1
            logger.debug("station %s: dropped epoch %d (last %d)", self.station_id, sample.epoch, self.last_epoch)
            return None
        if sample.fix_quality is not FixQuality.FIXED:
            self.diagnostics[f"skipped_{sample.fix_quality.name.lower()}"] += 1
            return None
        self.last_epoch = sample.epoch

        values = {
            Axis.EAST: sample.displacement.east,
            Axis.NORTH: sample.displacement.north,
            Axis.UP: sample.displacement.up,
        }
        processed = []
        for axis, channel in self.channels.items():
            verdict, filtered = channel.process(sample.epoch, values[axis])
            self.diagnostics[verdict.value] += 1
            processed.append(ProcessedSample(self.station_id, sample.epoch, axis, values[axis], verdict, filtered))

        east = self.channels[Axis.EAST].last_filtered
        north = self.channels[Axis.NORTH].last_filtered
        up = self.channels[Axis.UP].last_filtered
        levels, alerts = evaluate_warning(
            math.hypot(east, north),
            up,
            self.warning_config,
            self.latches,
            station_id=self.station_id,
            epoch=sample.epoch,
        )
        return EpochResult(processed, alerts, levels)
