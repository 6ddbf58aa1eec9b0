"""Experiment scenario files (YAML) with line-numbered diagnostics.

Example::

    seed: 7
    duration_s: 600
    rate_hz: 5
    epoch_origin_ms: 1700000000000
    site: demo
    station_id: 1
    reference: {lat_deg: 30.52, lon_deg: 114.36, height_m: 40.0}
    baseline_enu_m: [0.8, 0.0, 0.0]
    steps:                      # truth displacement, piecewise constant, mm
      - {at_s: 300, east: 0, north: 0, up: 10}
    noise: {displacement_mm: 3.0, phase_cycles: 0.0}
    spikes: {rate: 0.01, min_mm: 25, max_mm: 50}
    constellations: [gps, gnss]
    classifier: {slice_len: 64, k: 3, deformation_threshold: 20, confirm_count: 5}
    filter: {passband_edge: 0.4, stopband_edge: 0.8, passband_atten: 1, stopband_atten: 20, cutoff: 0.5}
    warning: {horizontal: [10, 20, 30], vertical: [10, 20, 30]}
    link:
      station: {loss_prob: 0.0, reorder_window: 0}
      uplink: {loss_prob: 0.1, duplicate_prob: 0.05, reorder_window: 4}

Every key is optional; omitted keys take the defaults above except
``steps`` (no steps).  The truth displacement before the first step is
zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .gnss.constellation import GNSS_COMBINED, GPS_ONLY
from .lowpass import FilterDesignSpec
from .outlier import ClassifierConfig
from .pipeline import WarningConfig
from .transport.linksim import LinkSimConfig

MAX_STEP_MM = 1000.0
MODES = {"gps": GPS_ONLY, "gnss": GNSS_COMBINED}


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<scenario>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


class _Node(dict):
    """Mapping that remembers the source line of itself and its keys."""

    line: int | None = None
    key_lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader: _LineLoader, node: yaml.MappingNode) -> _Node:
    out = _Node()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ScenarioError(f"duplicate key {key!r}", key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = value_node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


@dataclass(frozen=True)
class Step:
    at_s: float
    east: float = 0.0  # mm
    north: float = 0.0
    up: float = 0.0


@dataclass(frozen=True)
class SpikeConfig:
    rate: float = 0.01  # per sample and axis
    min_mm: float = 25.0
    max_mm: float = 50.0


@dataclass(frozen=True)
class ExperimentScenario:
    seed: int = 7
    duration_s: float = 600.0
    rate_hz: float = 5.0
    epoch_origin_ms: int = 1_700_000_000_000
    site: str = "demo"
    station_id: int = 1
    reference_lat_deg: float = 30.52
    reference_lon_deg: float = 114.36
    reference_height_m: float = 40.0
    baseline_enu_m: tuple[float, float, float] = (0.8, 0.0, 0.0)
    steps: tuple[Step, ...] = ()
    displacement_noise_mm: float = 3.0
    phase_noise_cycles: float = 0.0
    spikes: SpikeConfig = field(default_factory=SpikeConfig)
    constellations: tuple[str, ...] = ("gps", "gnss")
    elevation_mask_deg: float = 10.0
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    filter_spec: FilterDesignSpec | None = None
    warning: WarningConfig = field(default_factory=WarningConfig)
    station_link: LinkSimConfig = field(default_factory=LinkSimConfig)
    uplink: LinkSimConfig = field(default_factory=lambda: LinkSimConfig(0.1, 0.05, 4, 0.01))

    def __post_init__(self) -> None:
        if not self.rate_hz > 0 or self.rate_hz > 1000:
            raise ScenarioError("rate_hz must lie in (0, 1000]")
        if not self.duration_s > 0:
            raise ScenarioError("duration_s must be positive")
        if self.displacement_noise_mm < 0 or self.phase_noise_cycles < 0:
            raise ScenarioError("noise levels must be >= 0")
        if not 0 <= self.spikes.rate < 1 or not 0 <= self.spikes.min_mm <= self.spikes.max_mm:
            raise ScenarioError("spikes need 0 <= rate < 1 and 0 <= min_mm <= max_mm")
        if not self.constellations or any(c not in MODES for c in self.constellations):
            raise ScenarioError(f"constellations must be a non-empty subset of {sorted(MODES)}")
        if len(set(self.constellations)) != len(self.constellations):
            raise ScenarioError("constellations listed twice")
        if not 0 <= self.station_id < 65536:
            raise ScenarioError("station_id must fit in 16 bits")
        for s in self.steps:
            if max(abs(s.east), abs(s.north), abs(s.up)) > MAX_STEP_MM:
                raise ScenarioError(f"step at {s.at_s} s exceeds +/-{MAX_STEP_MM} mm")
            if not 0 <= s.at_s <= self.duration_s:
                raise ScenarioError(f"step time {s.at_s} s outside the scenario")
        if list(self.steps) != sorted(self.steps, key=lambda s: s.at_s):
            raise ScenarioError("steps must be in ascending time order")
        if self.filter_spec is not None and self.filter_spec.sample_rate != self.rate_hz:
            raise ScenarioError("filter sample rate must equal rate_hz")

    @property
    def n_epochs(self) -> int:
        return int(math.floor(self.duration_s * self.rate_hz + 1e-9))

    @property
    def design_spec(self) -> FilterDesignSpec:
        if self.filter_spec is not None:
            return self.filter_spec
        return FilterDesignSpec(0.4, 0.8, 1.0, 20.0, self.rate_hz, 0.5)

    def epochs(self) -> np.ndarray:
        i = np.arange(self.n_epochs, dtype=np.int64)
        return self.epoch_origin_ms + np.round(i * 1000.0 / self.rate_hz).astype(np.int64)

    def truth_mm(self, epochs: np.ndarray | None = None) -> np.ndarray:
        """(E, 3) truth ENU displacement in mm at ``epochs`` (default: all epochs)."""
        epochs = self.epochs() if epochs is None else np.asarray(epochs)
        t = (epochs - self.epoch_origin_ms) / 1000.0
        out = np.zeros((len(t), 3))
        for s in self.steps:
            out[t >= s.at_s] = (s.east, s.north, s.up)
        return out

    def breakpoints_ms(self) -> list[int]:
        return [self.epoch_origin_ms + round(s.at_s * 1000) for s in self.steps]

    def to_dict(self) -> dict:
        """Normalised, fully expanded form (suitable for summaries)."""
        spec = self.design_spec
        return {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "rate_hz": self.rate_hz,
            "epoch_origin_ms": self.epoch_origin_ms,
            "site": self.site,
            "station_id": self.station_id,
            "reference": {
                "lat_deg": self.reference_lat_deg,
                "lon_deg": self.reference_lon_deg,
                "height_m": self.reference_height_m,
            },
            "baseline_enu_m": list(self.baseline_enu_m),
            "steps": [vars(s).copy() for s in self.steps],
            "noise": {"displacement_mm": self.displacement_noise_mm, "phase_cycles": self.phase_noise_cycles},
            "spikes": vars(self.spikes).copy(),
            "constellations": list(self.constellations),
            "elevation_mask_deg": self.elevation_mask_deg,
            "classifier": {f.name: getattr(self.classifier, f.name) for f in fields(ClassifierConfig)},
            "filter": {
                "passband_edge": spec.passband_edge,
                "stopband_edge": spec.stopband_edge,
                "passband_atten": spec.passband_atten,
                "stopband_atten": spec.stopband_atten,
                "cutoff": spec.cutoff,
            },
            "warning": {
                "horizontal": list(self.warning.horizontal_thresholds),
                "vertical": list(self.warning.vertical_thresholds),
                "hysteresis": self.warning.hysteresis,
            },
            "link": {
                "station": {f.name: getattr(self.station_link, f.name) for f in fields(LinkSimConfig)},
                "uplink": {f.name: getattr(self.uplink, f.name) for f in fields(LinkSimConfig)},
            },
        }


# -- parsing ----------------------------------------------------------

_TOP_KEYS = {
    "seed",
    "duration_s",
    "rate_hz",
    "epoch_origin_ms",
    "site",
    "station_id",
    "reference",
    "baseline_enu_m",
    "steps",
    "noise",
    "spikes",
    "constellations",
    "elevation_mask_deg",
    "classifier",
    "filter",
    "warning",
    "link",
}


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, message: str, line: int | None) -> ScenarioError:
        return ScenarioError(message, line, self.source)

    def mapping(self, value: Any, where: str, line: int | None, allowed: set[str]) -> _Node:
        if not isinstance(value, dict):
            raise self.fail(f"{where} must be a mapping", line)
        for key in value:
            if key not in allowed:
                raise self.fail(f"unknown key {key!r} in {where}", _line(value, key, line))
        return value

    def number(self, node: dict, key: str, default: float, *, integer: bool = False):
        if key not in node:
            return default
        value = node[key]
        ok = isinstance(value, int) if integer else isinstance(value, (int, float))
        if isinstance(value, bool) or not ok or (not integer and not math.isfinite(value)):
            kind = "an integer" if integer else "a finite number"
            raise self.fail(f"{key!r} must be {kind}, got {value!r}", _line(node, key))
        return int(value) if integer else float(value)

    def build(self, cls, node: dict, key: str, line: int | None, **kwargs):
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise self.fail(f"invalid {key}: {exc}", line) from None


def _line(node: Any, key: str | None = None, default: int | None = None) -> int | None:
    if isinstance(node, _Node):
        if key is not None and key in node.key_lines:
            return node.key_lines[key]
        return node.line
    return default


def _link(r: _Reader, node: Any, where: str, line: int | None, default: LinkSimConfig, seed: int) -> LinkSimConfig:
    names = {f.name for f in fields(LinkSimConfig)}
    node = r.mapping(node, where, line, names)
    kwargs = {}
    for name in names:
        base = getattr(default, name)
        kwargs[name] = r.number(node, name, base, integer=isinstance(base, int))
    if "seed" not in node:
        kwargs["seed"] = seed
    return r.build(LinkSimConfig, node, where, _line(node, None, line), **kwargs)


def parse_scenario(doc: Any, source: str = "<scenario>") -> ExperimentScenario:
    r = _Reader(source)
    if doc is None:
        doc = _Node()
    top = r.mapping(doc, "scenario", 1, _TOP_KEYS)
    d = ExperimentScenario()
    kw: dict[str, Any] = {}
    kw["seed"] = r.number(top, "seed", d.seed, integer=True)
    kw["duration_s"] = r.number(top, "duration_s", d.duration_s)
    kw["rate_hz"] = r.number(top, "rate_hz", d.rate_hz)
    kw["epoch_origin_ms"] = r.number(top, "epoch_origin_ms", d.epoch_origin_ms, integer=True)
    kw["station_id"] = r.number(top, "station_id", d.station_id, integer=True)
    kw["elevation_mask_deg"] = r.number(top, "elevation_mask_deg", d.elevation_mask_deg)
    site = top.get("site", d.site)
    if not isinstance(site, str) or not site or not all(c.isalnum() or c in "-_" for c in site):
        raise r.fail("'site' must be a non-empty name of letters, digits, '-' or '_'", _line(top, "site"))
    kw["site"] = site

    if "reference" in top:
        ref = r.mapping(top["reference"], "reference", _line(top, "reference"), {"lat_deg", "lon_deg", "height_m"})
        kw["reference_lat_deg"] = r.number(ref, "lat_deg", d.reference_lat_deg)
        kw["reference_lon_deg"] = r.number(ref, "lon_deg", d.reference_lon_deg)
        kw["reference_height_m"] = r.number(ref, "height_m", d.reference_height_m)
        if not -90 <= kw["reference_lat_deg"] <= 90:
            raise r.fail("lat_deg must lie in [-90, 90]", _line(ref, "lat_deg"))

    if "baseline_enu_m" in top:
        b = top["baseline_enu_m"]
        if not (isinstance(b, list) and len(b) == 3 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in b)):
            raise r.fail("baseline_enu_m must be a list of three numbers", _line(top, "baseline_enu_m"))
        if not 0 < math.hypot(*b) < 50_000:
            raise r.fail("baseline length must lie in (0, 50 km)", _line(top, "baseline_enu_m"))
        kw["baseline_enu_m"] = tuple(float(v) for v in b)

    if "steps" in top:
        steps_node = top["steps"]
        if not isinstance(steps_node, list):
            raise r.fail("steps must be a list", _line(top, "steps"))
        steps = []
        for item in steps_node:
            item = r.mapping(item, "step", _line(top, "steps"), {"at_s", "east", "north", "up"})
            if "at_s" not in item:
                raise r.fail("step needs 'at_s'", _line(item))
            step = Step(
                r.number(item, "at_s", 0.0),
                r.number(item, "east", 0.0),
                r.number(item, "north", 0.0),
                r.number(item, "up", 0.0),
            )
            if max(abs(step.east), abs(step.north), abs(step.up)) > MAX_STEP_MM:
                raise r.fail(f"step exceeds +/-{MAX_STEP_MM:g} mm", _line(item))
            if not 0 <= step.at_s <= kw["duration_s"]:
                raise r.fail(f"step time {step.at_s:g} s outside [0, duration_s]", _line(item, "at_s"))
            if steps and step.at_s < steps[-1].at_s:
                raise r.fail("steps must be in ascending time order", _line(item, "at_s"))
            steps.append(step)
        kw["steps"] = tuple(steps)

    if "noise" in top:
        noise = r.mapping(top["noise"], "noise", _line(top, "noise"), {"displacement_mm", "phase_cycles"})
        kw["displacement_noise_mm"] = r.number(noise, "displacement_mm", d.displacement_noise_mm)
        kw["phase_noise_cycles"] = r.number(noise, "phase_cycles", d.phase_noise_cycles)

    if "spikes" in top:
        sp = r.mapping(top["spikes"], "spikes", _line(top, "spikes"), {"rate", "min_mm", "max_mm"})
        kw["spikes"] = SpikeConfig(
            r.number(sp, "rate", d.spikes.rate), r.number(sp, "min_mm", d.spikes.min_mm), r.number(sp, "max_mm", d.spikes.max_mm)
        )

    if "constellations" in top:
        c = top["constellations"]
        if isinstance(c, str):
            c = [c]
        if not isinstance(c, list) or not all(isinstance(v, str) for v in c):
            raise r.fail("constellations must be a list of names", _line(top, "constellations"))
        kw["constellations"] = tuple(v.lower() for v in c)

    if "classifier" in top:
        names = {f.name for f in fields(ClassifierConfig)}
        node = r.mapping(top["classifier"], "classifier", _line(top, "classifier"), names)
        base = ClassifierConfig()
        ckw = {n: r.number(node, n, getattr(base, n), integer=isinstance(getattr(base, n), int)) for n in names}
        kw["classifier"] = r.build(ClassifierConfig, node, "classifier", _line(top, "classifier"), **ckw)

    rate = kw["rate_hz"]
    if "filter" in top:
        keys = {"passband_edge", "stopband_edge", "passband_atten", "stopband_atten", "cutoff"}
        node = r.mapping(top["filter"], "filter", _line(top, "filter"), keys)
        base = dict(passband_edge=0.4, stopband_edge=0.8, passband_atten=1.0, stopband_atten=20.0, cutoff=0.5)
        fkw = {n: r.number(node, n, base[n]) for n in keys}
        kw["filter_spec"] = r.build(FilterDesignSpec, node, "filter", _line(top, "filter"), sample_rate=rate, **fkw)

    if "warning" in top:
        node = r.mapping(top["warning"], "warning", _line(top, "warning"), {"horizontal", "vertical", "hysteresis"})
        wkw = {"hysteresis": r.number(node, "hysteresis", d.warning.hysteresis)}
        for key, target in (("horizontal", "horizontal_thresholds"), ("vertical", "vertical_thresholds")):
            if key in node:
                wkw[target] = node[key] if isinstance(node[key], list) else ()
        kw["warning"] = r.build(WarningConfig, node, "warning", _line(top, "warning"), **wkw)

    if "link" in top:
        line = _line(top, "link")
        node = r.mapping(top["link"], "link", line, {"station", "uplink"})
        if "station" in node:
            kw["station_link"] = _link(r, node["station"], "link.station", _line(node, "station"), d.station_link, kw["seed"] + 101)
        if "uplink" in node:
            kw["uplink"] = _link(r, node["uplink"], "link.uplink", _line(node, "uplink"), d.uplink, kw["seed"] + 202)
    kw.setdefault("station_link", _with_seed(d.station_link, kw["seed"] + 101))
    kw.setdefault("uplink", _with_seed(d.uplink, kw["seed"] + 202))

    try:
        return ExperimentScenario(**kw)
    except ScenarioError as exc:
        raise ScenarioError(str(exc).split(": ", 1)[-1], None, source) from None
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), None, source) from None


def _with_seed(config: LinkSimConfig, seed: int) -> LinkSimConfig:
    return LinkSimConfig(**{**{f.name: getattr(config, f.name) for f in fields(LinkSimConfig)}, "seed": seed})


def loads_scenario(text: str, source: str = "<scenario>") -> ExperimentScenario:
    try:
        doc = yaml.load(text, Loader=_LineLoader)  # noqa: S506 - SafeLoader subclass
    except ScenarioError as exc:
        raise ScenarioError(str(exc).split(": ", 1)[-1], exc.line, source) from None
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ScenarioError(f"YAML syntax error: {exc.problem}", line, source) from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML error: {exc}", None, source) from None
    return parse_scenario(doc, source)


def load_scenario(path: str | Path) -> ExperimentScenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(path)) from None
    return loads_scenario(text, str(path))


def dump_scenario(scenario: ExperimentScenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False)
