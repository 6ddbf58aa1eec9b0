"""Edge-side reception of station frames: decode, drop duplicates, restore order."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from .frame import FrameError, StationFrame, decode_frame

logger = logging.getLogger(__name__)

SEQ_MOD = 1 << 16


def unwrap_sequence(seq: int, reference: int | None) -> int:
    """Map a 16-bit sequence onto the unbounded count nearest ``reference``."""
    if reference is None:
        return seq
    delta = (seq - reference) % SEQ_MOD
    if delta >= SEQ_MOD // 2:
        delta -= SEQ_MOD
    return reference + delta


@dataclass
class _StationState:
    last_seen: int | None = None
    released: int | None = None
    held: dict[int, StationFrame] = field(default_factory=dict)


class FrameAssembler:
    """Frames are held until ``hold`` later frames arrive, then released in sequence order."""

    def __init__(self, hold: int = 0):
        if hold < 0:
            raise ValueError("hold must be >= 0")
        self.hold = hold
        self.stations: dict[int, _StationState] = {}
        self.diagnostics: Counter = Counter()

    def push(self, data: bytes) -> list[StationFrame]:
        try:
            frame = decode_frame(data)
        except FrameError as exc:
            self.diagnostics[type(exc).__name__] += 1
            logger.debug("dropped frame: %s", exc)
            return []
        st = self.stations.setdefault(frame.station_id, _StationState())
        seq = unwrap_sequence(frame.sequence, st.last_seen)
        st.last_seen = seq if st.last_seen is None else max(st.last_seen, seq)
        if (st.released is not None and seq <= st.released) or seq in st.held:
            self.diagnostics["duplicate"] += 1
            return []
        st.held[seq] = frame
        return self._release(st, keep=self.hold)

    def _release(self, st: _StationState, keep: int) -> list[StationFrame]:
        out = []
        while len(st.held) > keep:
            seq = min(st.held)
            out.append(st.held.pop(seq))
            if st.released is not None and seq > st.released + 1:
                self.diagnostics["gap"] += seq - st.released - 1
            st.released = seq
        return out

    def flush(self) -> list[StationFrame]:
        out = []
        for sid in sorted(self.stations):
            out.extend(self._release(self.stations[sid], keep=0))
        return out
