"""Gross-error rejection with the 3-sigma (Raida/Pauta) criterion.

Two forms live here:

* :func:`batch_raida` -- the classic criterion over a whole sequence,
  used as the reference oracle.
* :class:`TimeSliceClassifier` -- the streaming, time-slice variant.  The
  slice keeps running sums of ``x = t - t0`` and ``x**2`` for a fixed
  offset ``t0``, so dropping a gross error or sliding the window never
  re-sums the retained samples.  Samples beyond ``k*sigma`` but inside the
  deformation threshold ``W`` are held as pending deformation; a run of
  ``m`` consistent samples confirms it and the slice is rebuilt from them.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

DEFAULT_SIGMA_FLOOR = 0.1  # mm


class Verdict(Enum):
    ACCEPT = "accept"
    GROSS_ERROR = "gross_error"
    DEFORMATION_PENDING = "deformation_pending"
    DEFORMATION_CONFIRMED = "deformation_confirmed"


@dataclass(frozen=True)
class Sample:
    epoch: int  # ms
    value: float  # mm


def batch_mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def batch_sigma(values: Sequence[float]) -> float:
    """Sample standard deviation with the n-1 divisor (two-pass)."""
    mean = batch_mean(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))


def batch_raida(values: Sequence[float], k: float = 3.0, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> set[int]:
    """Indices whose residual from the sequence mean exceeds ``k`` sigma."""
    if len(values) < 3:
        raise ValueError(f"need at least 3 values, got {len(values)}")
    mean = batch_mean(values)
    band = k * max(batch_sigma(values), sigma_floor)
    return {i for i, v in enumerate(values) if abs(v - mean) > band}


class _ExactSum:
    """Exact running sum of dyadic rationals: value = num / 2**shift."""

    __slots__ = ("num", "shift")

    def __init__(self) -> None:
        self.num = 0
        self.shift = 0

    def add(self, num: int, shift: int) -> None:
        if shift > self.shift:
            self.num <<= shift - self.shift
            self.shift = shift
        self.num += num << (self.shift - shift)


def _dyadic(value: float) -> tuple[int, int]:
    num, den = value.as_integer_ratio()
    return num, den.bit_length() - 1


class SliceAccumulator:
    """Running n, sum(x) and sum(x**2) over a sliding slice, x = value - t0.

    The sums are held exactly (as scaled integers), so additions and
    removals commute and removing a value restores the previous state
    bit-for-bit; mean and sigma are each rounded once on query.  When the
    slice is full, adding evicts the oldest sample through the same
    removal path.
    """

    def __init__(self, t0: float, capacity: int):
        if capacity < 8:
            raise ValueError(f"capacity must be >= 8, got {capacity}")
        self.t0 = float(t0)
        self.capacity = capacity
        self.ring: deque[float] = deque()
        self._t0_num, self._t0_shift = _dyadic(self.t0)
        self._sx = _ExactSum()
        self._sx2 = _ExactSum()

    @property
    def n(self) -> int:
        return len(self.ring)

    @property
    def sum_x(self) -> float:
        return self._sx.num / (1 << self._sx.shift)

    @property
    def sum_x2(self) -> float:
        return self._sx2.num / (1 << self._sx2.shift)

    def _offset(self, value: float) -> tuple[int, int]:
        num, shift = _dyadic(float(value))
        common = max(shift, self._t0_shift)
        return (num << (common - shift)) - (self._t0_num << (common - self._t0_shift)), common

    def _apply(self, value: float, sign: int) -> None:
        num, shift = self._offset(value)
        self._sx.add(sign * num, shift)
        self._sx2.add(sign * num * num, 2 * shift)

    def add(self, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("sample value must be finite")
        if len(self.ring) >= self.capacity:
            self._apply(self.ring.popleft(), -1)
        self.ring.append(value)
        self._apply(value, +1)

    def remove(self, value: float) -> None:
        value = float(value)
        try:
            self.ring.remove(value)
        except ValueError:
            raise ValueError(f"{value!r} is not in the slice") from None
        self._apply(value, -1)

    def extend(self, values: Iterable[float]) -> None:
        for v in values:
            self.add(v)

    def mean(self) -> float:
        """t0 + sum(x)/n."""
        n = self.n
        if n < 1:
            raise ValueError("mean of an empty slice")
        shift = max(self._sx.shift, self._t0_shift)
        total = (self._t0_num << (shift - self._t0_shift)) * n + (self._sx.num << (shift - self._sx.shift))
        return total / (n << shift)

    def sigma(self, floor: float = 0.0) -> float:
        """sqrt((sum(x^2) - sum(x)^2/n) / (n-1)), never below ``floor``."""
        n = self.n
        if n < 2:
            raise ValueError(f"sigma needs at least 2 samples, have {n}")
        shift = max(self._sx2.shift, 2 * self._sx.shift)
        s2 = self._sx2.num << (shift - self._sx2.shift)
        s1sq = (self._sx.num * self._sx.num) << (shift - 2 * self._sx.shift)
        variance = (n * s2 - s1sq) / ((n * (n - 1)) << shift)
        return max(math.sqrt(variance), floor)


@dataclass(frozen=True)
class ClassifierConfig:
    slice_len: int = 64  # T, samples
    k: float = 3.0
    deformation_threshold: float = 20.0  # W, mm
    confirm_count: int = 5  # m
    min_sigma_floor: float = DEFAULT_SIGMA_FLOOR  # mm
    confirm_k: float = 1.0  # follower band, in sigmas

    def __post_init__(self) -> None:
        if self.slice_len < 8:
            raise ValueError("slice_len must be >= 8")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.deformation_threshold > 0:
            raise ValueError("deformation_threshold must be positive")
        if self.confirm_count < 1:
            raise ValueError("confirm_count must be >= 1")
        if self.min_sigma_floor < 0:
            raise ValueError("min_sigma_floor must be >= 0")
        if not 0 <= self.confirm_k <= self.k:
            raise ValueError("confirm_k must lie in [0, k]")

    @property
    def warmup(self) -> int:
        return self.slice_len // 2


@dataclass(frozen=True)
class Classification:
    sample: Sample
    verdict: Verdict
    mean: float | None = None  # slice mean the sample was tested against
    sigma: float | None = None
    rejected: tuple[Sample, ...] = ()  # earlier pending samples now ruled gross errors
    reseeded: bool = False
    accepted_late: tuple[Sample, ...] = ()  # earlier pending samples now accepted

    @property
    def residual(self) -> float | None:
        return None if self.mean is None else self.sample.value - self.mean


@dataclass
class TimeSliceClassifier:
    """Streaming time-slice 3-sigma classifier for one displacement axis.

    Decision per sample, against the slice mean and sigma (floored):

    * warm-up (slice holds fewer than T/2 samples): accept and add;
    * ``|V| <= k*sigma``: accept and add;
    * ``|V| >= W``: gross error, discarded without touching the sums;
    * otherwise the sample opens a pending deformation run.  Each later
      sample that stays on the same side of the old mean by more than
      ``confirm_k*sigma`` (and below ``W``) extends the run; a run of
      ``m`` samples is confirmed and the slice is reseeded from it with
      ``t0`` = the first run sample.  A sample that breaks the run turns
      the run members that were beyond ``k*sigma`` into gross errors;
      followers that stayed inside ``k*sigma`` are accepted late (added
      to the slice).  The breaking sample is then judged afresh.
      Blunders (``|V| >= W``) inside a run are dropped without breaking it.
    """

    config: ClassifierConfig = field(default_factory=ClassifierConfig)
    acc: SliceAccumulator | None = None
    pending: list[Sample] = field(default_factory=list)
    last_epoch: int | None = None
    _beyond: list[bool] = field(default_factory=list, repr=False)  # per pending sample: |V| > k*sigma

    def reset(self) -> None:
        self.acc = None
        self.pending.clear()
        self._beyond.clear()
        self.last_epoch = None

    def _seed(self, values: Sequence[float]) -> None:
        self.acc = SliceAccumulator(t0=values[0], capacity=self.config.slice_len)
        self.acc.extend(values)

    def classify(self, sample: Sample) -> Classification:
        if self.last_epoch is not None and sample.epoch <= self.last_epoch:
            raise ValueError(f"epoch {sample.epoch} not after {self.last_epoch}")
        self.last_epoch = sample.epoch
        cfg = self.config

        if self.acc is None:
            self._seed([sample.value])
            return Classification(sample, Verdict.ACCEPT)
        if self.acc.n < cfg.warmup:
            self.acc.add(sample.value)
            return Classification(sample, Verdict.ACCEPT)

        mean = self.acc.mean()
        sigma = self.acc.sigma(cfg.min_sigma_floor)
        residual = sample.value - mean
        magnitude = abs(residual)

        rejected: tuple[Sample, ...] = ()
        late: tuple[Sample, ...] = ()
        if self.pending:
            if magnitude >= cfg.deformation_threshold:
                return Classification(sample, Verdict.GROSS_ERROR, mean, sigma)
            run_sign = math.copysign(1.0, self.pending[0].value - mean)
            if magnitude > cfg.confirm_k * sigma and math.copysign(1.0, residual) == run_sign:
                return self._extend_run(sample, mean, sigma, magnitude > cfg.k * sigma)
            rejected = tuple(s for s, b in zip(self.pending, self._beyond) if b)
            late = tuple(s for s, b in zip(self.pending, self._beyond) if not b)
            self.pending.clear()
            self._beyond.clear()
            if late:
                self.acc.extend(s.value for s in late)
                mean = self.acc.mean()
                sigma = self.acc.sigma(cfg.min_sigma_floor)
                residual = sample.value - mean
                magnitude = abs(residual)

        if magnitude <= cfg.k * sigma:
            self.acc.add(sample.value)
            return Classification(sample, Verdict.ACCEPT, mean, sigma, rejected, accepted_late=late)
        if magnitude >= cfg.deformation_threshold:
            return Classification(sample, Verdict.GROSS_ERROR, mean, sigma, rejected, accepted_late=late)
        result = self._extend_run(sample, mean, sigma, True)
        return Classification(result.sample, result.verdict, mean, sigma, rejected, result.reseeded, late)

    def _extend_run(self, sample: Sample, mean: float, sigma: float, beyond: bool) -> Classification:
        self.pending.append(sample)
        self._beyond.append(beyond)
        if len(self.pending) < self.config.confirm_count:
            return Classification(sample, Verdict.DEFORMATION_PENDING, mean, sigma)
        self._seed([s.value for s in self.pending])
        self.pending.clear()
        self._beyond.clear()
        return Classification(sample, Verdict.DEFORMATION_CONFIRMED, mean, sigma, reseeded=True)


def classify_series(
    values: Iterable[float], config: ClassifierConfig | None = None, epoch_step: int = 200
) -> list[Classification]:
    """Run a fresh classifier over ``values`` with synthetic, evenly spaced epochs."""
    clf = TimeSliceClassifier(config or ClassifierConfig())
    return [clf.classify(Sample(i * epoch_step, float(v))) for i, v in enumerate(values)]


def final_verdicts(results: Sequence[Classification]) -> list[Verdict]:
    """Per-sample verdicts after broken runs are resolved."""
    index = {r.sample.epoch: i for i, r in enumerate(results)}
    verdicts = [r.verdict for r in results]
    for r in results:
        for s in r.rejected:
            verdicts[index[s.epoch]] = Verdict.GROSS_ERROR
        for s in r.accepted_late:
            verdicts[index[s.epoch]] = Verdict.ACCEPT
    return verdicts
