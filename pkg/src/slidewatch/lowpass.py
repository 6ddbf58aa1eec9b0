"""Butterworth low-pass design and causal second-order-section filtering.

Order selection follows the classic attenuation-spec formula; the digital
filter is realised from the analog prototype with a frequency-prewarped
bilinear transform, so the digital magnitude at f equals the analog law
evaluated at 2*fs*tan(pi*f/fs).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_ORDER = 20


@dataclass(frozen=True)
class FilterDesignSpec:
    passband_edge: float  # Hz
    stopband_edge: float  # Hz
    passband_atten: float  # dB
    stopband_atten: float  # dB
    sample_rate: float  # Hz
    cutoff: float  # Hz

    def __post_init__(self) -> None:
        nyquist = self.sample_rate / 2
        if not 0 < self.passband_edge < self.stopband_edge < nyquist:
            raise ValueError("need 0 < passband_edge < stopband_edge < sample_rate/2")
        if not 0 < self.passband_atten <= self.stopband_atten:
            raise ValueError("need 0 < passband_atten <= stopband_atten")
        if not 0 < self.cutoff < nyquist:
            raise ValueError("cutoff must lie in (0, sample_rate/2)")


# 1 dB ripple up to 0.4 Hz, 20 dB down by 0.8 Hz at 5 Hz sampling: order 5.
DEFAULT_SPEC = FilterDesignSpec(
    passband_edge=0.4,
    stopband_edge=0.8,
    passband_atten=1.0,
    stopband_atten=20.0,
    sample_rate=5.0,
    cutoff=0.5,
)


def order_for(passband_edge: float, stopband_edge: float, passband_atten: float, stopband_atten: float) -> int:
    """Smallest order N with N >= lg sqrt((10^(as/10)-1)/(10^(ap/10)-1)) / lg(ws/wp), at least 1."""
    if not stopband_edge > passband_edge > 0:
        raise ValueError("stopband edge must exceed the passband edge")
    if passband_atten <= 0 or stopband_atten < passband_atten:
        raise ValueError("need 0 < passband_atten <= stopband_atten")
    ratio = (10 ** (0.1 * stopband_atten) - 1) / (10 ** (0.1 * passband_atten) - 1)
    n = math.log10(math.sqrt(ratio)) / math.log10(stopband_edge / passband_edge)
    return max(1, math.ceil(n))


def required_order(spec: FilterDesignSpec) -> int:
    return order_for(spec.passband_edge, spec.stopband_edge, spec.passband_atten, spec.stopband_atten)


def analog_magnitude(order: int, cutoff: float, freq) -> np.ndarray | float:
    """|H(w)| = 1 / sqrt(1 + (w/wc)^(2N))."""
    w = np.asarray(freq, dtype=float)
    if np.any(w < 0):
        raise ValueError("frequency must be non-negative")
    out = 1.0 / np.sqrt(1.0 + (w / cutoff) ** (2 * order))
    return float(out) if out.ndim == 0 else out


def prewarp(freq, sample_rate: float):
    """Analog frequency (Hz) that the bilinear transform maps onto ``freq``."""
    return sample_rate / math.pi * np.tan(np.pi * np.asarray(freq, dtype=float) / sample_rate)


def warped_magnitude(order: int, cutoff: float, sample_rate: float, freq):
    """Analog law at prewarped frequencies: the exact digital Butterworth magnitude."""
    return analog_magnitude(order, float(prewarp(cutoff, sample_rate)), prewarp(freq, sample_rate))


@dataclass(frozen=True)
class DigitalFilter:
    order: int
    cutoff: float  # Hz
    sample_rate: float  # Hz
    sections: np.ndarray = field(repr=False)  # (n, 6) rows: b0 b1 b2 a0 a1 a2, a0 == 1

    def poles(self) -> np.ndarray:
        out = []
        for b0, b1, b2, a0, a1, a2 in self.sections:
            roots = np.roots([a0, a1, a2]) if a2 != 0 else np.roots([a0, a1])
            out.extend(roots)
        return np.array(out)

    def response(self, freq) -> np.ndarray:
        """Complex frequency response on the unit circle at ``freq`` (Hz)."""
        z = np.exp(-2j * np.pi * np.asarray(freq, dtype=float) / self.sample_rate)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            h = h * (b0 + b1 * z + b2 * z * z) / (a0 + a1 * z + a2 * z * z)
        return h

    def magnitude(self, freq):
        out = np.abs(self.response(freq))
        return float(out) if out.ndim == 0 else out

    @property
    def dc_gain(self) -> float:
        return self.magnitude(0.0)


def design_butterworth(order: int, cutoff: float, sample_rate: float) -> DigitalFilter:
    """Order-N Butterworth low-pass as a cascade of ceil(N/2) sections.

    Each section is normalised to unit gain at DC.
    """
    if not (isinstance(order, int) and 1 <= order <= MAX_ORDER):
        raise ValueError(f"order must be an integer in [1, {MAX_ORDER}]")
    if not 0 < cutoff < sample_rate / 2:
        raise ValueError("cutoff must lie in (0, sample_rate/2)")
    fs2 = 2.0 * sample_rate
    omega = 2.0 * math.pi * float(prewarp(cutoff, sample_rate))
    sections = []
    for k in range(order // 2):
        s = omega * cmath.exp(1j * math.pi * (2 * k + order + 1) / (2 * order))
        z = (fs2 + s) / (fs2 - s)
        a1, a2 = -2.0 * z.real, abs(z) ** 2
        g = (1.0 + a1 + a2) / 4.0
        sections.append([g, 2 * g, g, 1.0, a1, a2])
    if order % 2:
        z = (fs2 - omega) / (fs2 + omega)
        g = (1.0 - z) / 2.0
        sections.append([g, g, 0.0, 1.0, -z, 0.0])
    return DigitalFilter(order, float(cutoff), float(sample_rate), np.array(sections))


def design_from_spec(spec: FilterDesignSpec = DEFAULT_SPEC) -> DigitalFilter:
    return design_butterworth(required_order(spec), spec.cutoff, spec.sample_rate)


class FilterStream:
    """Causal per-channel state: two delay registers per section (transposed direct form II)."""

    def __init__(self, filt: DigitalFilter):
        self.filter = filt
        self._coef = [tuple(float(c) for c in row) for row in filt.sections]
        self.state = np.zeros((len(self._coef), 2))

    def reset(self, level: float | None = None) -> None:
        """Zero the registers, or preload the steady state for constant input ``level``."""
        if level is None:
            self.state[:] = 0.0
            return
        for i, (b0, b1, b2, _a0, a1, a2) in enumerate(self._coef):
            s2 = (b2 - a2) * level
            self.state[i] = ((b1 - a1) * level + s2, s2)
            # section output equals its input at DC, so the level passes through

    def step(self, x: float) -> float:
        state = self.state
        for i, (b0, b1, b2, _a0, a1, a2) in enumerate(self._coef):
            s1, s2 = state[i]
            y = b0 * x + s1
            state[i, 0] = b1 * x - a1 * y + s2
            state[i, 1] = b2 * x - a2 * y
            x = y
        return x

    def run(self, xs: Iterable[float]) -> np.ndarray:
        return np.array([self.step(float(x)) for x in xs])


def process_sample(filt: DigitalFilter, state: np.ndarray, x: float) -> tuple[float, np.ndarray]:
    """Functional single step: returns the output and a new state array."""
    stream = FilterStream(filt)
    stream.state = np.array(state, dtype=float, copy=True)
    y = stream.step(x)
    return y, stream.state


def filter_signal(filt: DigitalFilter, xs: Sequence[float]) -> np.ndarray:
    """Whole-sequence filtering from zero state."""
    n = len(xs)
    x = np.asarray(xs, dtype=float)
    for b0, b1, b2, _a0, a1, a2 in filt.sections:
        y = np.empty(n)
        s1 = s2 = 0.0
        for i in range(n):
            yi = b0 * x[i] + s1
            s1 = b1 * x[i] - a1 * yi + s2
            s2 = b2 * x[i] - a2 * yi
            y[i] = yi
        x = y
    return x


def settling_samples(filt: DigitalFilter, tolerance: float = 0.02) -> int:
    """Samples until the unit-step response stays within ``tolerance`` of 1."""
    n = int(20 * filt.order * filt.sample_rate / filt.cutoff) + 10
    err = np.abs(filter_signal(filt, np.ones(n)) - 1.0)
    outside = np.flatnonzero(err > tolerance)
    return int(outside[-1]) + 1 if outside.size else 0
