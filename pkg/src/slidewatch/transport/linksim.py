"""Seeded lossy link: loss, duplication, bounded reordering and bit corruption."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field


@dataclass(frozen=True)
class LinkSimConfig:
    loss_prob: float = 0.0
    duplicate_prob: float = 0.0
    reorder_window: int = 0  # extra delay of up to this many slots
    corrupt_prob: float = 0.0
    seed: int = 0
    latency: float = 0.05  # s
    slot: float = 0.01  # s per reorder slot

    def __post_init__(self) -> None:
        for name in ("loss_prob", "duplicate_prob", "corrupt_prob"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")
        if self.latency < 0 or self.slot < 0:
            raise ValueError("latency and slot must be >= 0")


@dataclass
class LinkStats:
    sent: int = 0
    lost: int = 0
    duplicated: int = 0
    corrupted: int = 0
    delivered: int = 0


@dataclass
class LossyLink:
    """One-way channel.  ``send`` schedules copies; ``poll`` releases those due.

    Every random decision comes from one ``random.Random(seed)``, so a
    fixed seed and call sequence reproduce the same delivery trace.
    """

    config: LinkSimConfig = field(default_factory=LinkSimConfig)

    def __post_init__(self) -> None:
        self._rng = random.Random(self.config.seed)
        self._queue: list[tuple[float, int, bytes]] = []
        self._counter = 0
        self.stats = LinkStats()
        self.trace: list[tuple[str, int]] = []

    def _schedule(self, now: float, data: bytes) -> None:
        cfg = self.config
        if cfg.corrupt_prob and self._rng.random() < cfg.corrupt_prob:
            pos = self._rng.randrange(len(data) * 8) if data else 0
            if data:
                buf = bytearray(data)
                buf[pos // 8] ^= 1 << (pos % 8)
                data = bytes(buf)
                self.stats.corrupted += 1
        delay = cfg.latency + cfg.slot * self._rng.randint(0, cfg.reorder_window)
        heapq.heappush(self._queue, (now + delay, self._counter, data))
        self._counter += 1

    def send(self, now: float, data: bytes) -> None:
        cfg = self.config
        self.stats.sent += 1
        if self._rng.random() < cfg.loss_prob:
            self.stats.lost += 1
            self.trace.append(("lost", self.stats.sent))
            return
        self._schedule(now, data)
        if cfg.duplicate_prob and self._rng.random() < cfg.duplicate_prob:
            self.stats.duplicated += 1
            self._schedule(now, data)
        self.trace.append(("queued", self.stats.sent))

    def poll(self, now: float) -> list[bytes]:
        out = []
        while self._queue and self._queue[0][0] <= now:
            out.append(heapq.heappop(self._queue)[2])
        self.stats.delivered += len(out)
        return out

    def next_due(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def drain(self) -> list[bytes]:
        return self.poll(float("inf"))

    def __len__(self) -> int:
        return len(self._queue)
