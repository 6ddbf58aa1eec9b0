"""Edge -> cloud telemetry: at-least-once publish/ack with receiver deduplication.

Line protocol over a byte stream::

    PUB <topic> <message_id> <base64 payload>\n
    ACK <message_id>\n

The base64 body is a JSON object ``{"record": ..., "check": crc32}`` where
the check covers topic, message id and the canonical record text, so a
bit flip anywhere in a PUB line is detected and the line is ignored (the
publisher then retries).  Acknowledgements carry no check of their own;
the ack direction is modelled as a checksummed stream where corruption
shows up as loss.
"""

from __future__ import annotations

import base64
import binascii
import heapq
import json
import logging
import re
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable

from .linksim import LinkSimConfig, LossyLink

logger = logging.getLogger(__name__)

MAX_TRIES = 5
_TOPIC_RE = re.compile(r"^site/([A-Za-z0-9_-]+)/station/(\d+)/displacement$")


class TelemetryError(ValueError):
    pass


class DeliveryFailed(RuntimeError):
    """Retries exhausted; ``envelope`` holds the undelivered payload."""

    def __init__(self, envelope: TelemetryEnvelope, tries: int):
        super().__init__(f"message {envelope.message_id} undelivered after {tries} tries")
        self.envelope = envelope
        self.tries = tries


def topic_for(site: str, station_id: int) -> str:
    topic = f"site/{site}/station/{station_id}/displacement"
    if not _TOPIC_RE.match(topic):
        raise TelemetryError(f"invalid site name {site!r}")
    return topic


def parse_topic(topic: str) -> tuple[str, int]:
    m = _TOPIC_RE.match(topic)
    if not m:
        raise TelemetryError(f"malformed topic {topic!r}")
    return m.group(1), int(m.group(2))


def _canonical(record: Any) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TelemetryEnvelope:
    topic: str
    message_id: int
    payload: dict

    def __post_init__(self) -> None:
        parse_topic(self.topic)
        if not 0 <= self.message_id < 2**64:
            raise TelemetryError("message_id must be an unsigned 64-bit integer")

    def _check(self, body: str) -> int:
        return zlib.crc32(f"{self.topic} {self.message_id} {body}".encode())

    def encode_pub(self) -> bytes:
        body = _canonical(self.payload)
        doc = _canonical({"record": self.payload, "check": self._check(body)})
        b64 = base64.b64encode(doc.encode()).decode("ascii")
        return f"PUB {self.topic} {self.message_id} {b64}\n".encode("ascii")


def parse_pub(line: bytes) -> TelemetryEnvelope:
    try:
        text = line.decode("ascii")
        verb, topic, mid, b64 = text.rstrip("\n").split(" ")
        if verb != "PUB" or not mid.isdigit():
            raise TelemetryError("not a PUB line")
        doc = json.loads(base64.b64decode(b64, validate=True))
        env = TelemetryEnvelope(topic, int(mid), doc["record"])
        if doc["check"] != env._check(_canonical(env.payload)):
            raise TelemetryError("payload check mismatch")
        return env
    except TelemetryError:
        raise
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, binascii.Error) as exc:
        raise TelemetryError(f"unparseable PUB line: {exc}") from None


def encode_ack(message_id: int) -> bytes:
    return f"ACK {message_id}\n".encode("ascii")


def parse_ack(line: bytes) -> int:
    try:
        verb, mid = line.decode("ascii").rstrip("\n").split(" ")
    except (UnicodeDecodeError, ValueError):
        raise TelemetryError("unparseable ACK line") from None
    if verb != "ACK" or not mid.isdigit():
        raise TelemetryError("not an ACK line")
    return int(mid)


class DedupStore:
    """Serialization point: records each (publisher, message_id) at most once."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seen: set[tuple[str, int]] = set()

    def check_and_record(self, publisher: str, message_id: int) -> bool:
        """True the first time a key is seen, False for every repeat."""
        key = (publisher, message_id)
        with self._lock:
            if key in self._seen:
                return False
            self._seen.add(key)
            return True

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)


class ReceiveStatus(Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    REJECTED = "rejected"


@dataclass
class Receiver:
    """Cloud side.  Acks every valid delivery; forwards first deliveries to ``sink``."""

    dedup: DedupStore = field(default_factory=DedupStore)
    sink: Callable[[TelemetryEnvelope], None] | None = None

    def __post_init__(self) -> None:
        self.counts = {s: 0 for s in ReceiveStatus}

    def receive_dedup(self, publisher: str, envelope: TelemetryEnvelope) -> ReceiveStatus:
        if not self.dedup.check_and_record(publisher, envelope.message_id):
            self.counts[ReceiveStatus.DUPLICATE] += 1
            return ReceiveStatus.DUPLICATE
        self.counts[ReceiveStatus.ACCEPTED] += 1
        if self.sink is not None:
            self.sink(envelope)
        return ReceiveStatus.ACCEPTED

    def handle_line(self, publisher: str, line: bytes) -> tuple[ReceiveStatus, bytes | None]:
        try:
            env = parse_pub(line)
        except TelemetryError as exc:
            logger.debug("rejected line from %s: %s", publisher, exc)
            self.counts[ReceiveStatus.REJECTED] += 1
            return ReceiveStatus.REJECTED, None
        return self.receive_dedup(publisher, env), encode_ack(env.message_id)


@dataclass(frozen=True)
class RetryPolicy:
    timeout: float = 0.25  # s, first ack deadline
    backoff: float = 2.0
    max_timeout: float = 4.0
    max_tries: int = MAX_TRIES

    def __post_init__(self) -> None:
        if self.timeout <= 0 or self.backoff < 1 or self.max_timeout < self.timeout:
            raise ValueError("invalid retry timing")
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")

    def deadline_after(self, tries: int) -> float:
        return min(self.timeout * self.backoff ** (tries - 1), self.max_timeout)


@dataclass
class _InFlight:
    envelope: TelemetryEnvelope
    line: bytes
    tries: int
    deadline: float


class Publisher:
    """One session.  Message ids increase strictly; retransmissions reuse the id."""

    def __init__(self, site: str, policy: RetryPolicy | None = None, window: int = 64, first_id: int = 1):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.site = site
        self.policy = policy or RetryPolicy()
        self.window = window
        self._next_id = first_id
        self.in_flight: OrderedDict[int, _InFlight] = OrderedDict()
        self._deadlines: list[tuple[float, int]] = []
        self.transmissions = 0

    def make_envelope(self, station_id: int, record: dict) -> TelemetryEnvelope:
        env = TelemetryEnvelope(topic_for(self.site, station_id), self._next_id, record)
        self._next_id += 1
        return env

    @property
    def can_send(self) -> bool:
        return len(self.in_flight) < self.window

    def publish(self, envelope: TelemetryEnvelope, now: float, send: Callable[[float, bytes], None]) -> None:
        """Start (or restart, after a DeliveryFailed) delivery of ``envelope``."""
        if envelope.message_id in self.in_flight:
            raise ValueError(f"message {envelope.message_id} already in flight")
        entry = _InFlight(envelope, envelope.encode_pub(), 0, 0.0)
        self.in_flight[envelope.message_id] = entry
        self._transmit(entry, now, send)

    def _transmit(self, entry: _InFlight, now: float, send) -> None:
        entry.tries += 1
        entry.deadline = now + self.policy.deadline_after(entry.tries)
        heapq.heappush(self._deadlines, (entry.deadline, entry.envelope.message_id))
        self.transmissions += 1
        send(now, entry.line)

    def handle_ack(self, line: bytes) -> int | None:
        try:
            mid = parse_ack(line)
        except TelemetryError:
            return None
        return mid if self.in_flight.pop(mid, None) is not None else None

    def next_deadline(self) -> float | None:
        while self._deadlines:
            deadline, mid = self._deadlines[0]
            entry = self.in_flight.get(mid)
            if entry is not None and entry.deadline == deadline:
                return deadline
            heapq.heappop(self._deadlines)
        return None

    def poll_timeouts(self, now: float, send) -> list[DeliveryFailed]:
        """Retransmit expired messages; return failures for those out of tries."""
        failures = []
        while (deadline := self.next_deadline()) is not None and deadline <= now:
            _, mid = heapq.heappop(self._deadlines)
            entry = self.in_flight[mid]
            if entry.tries >= self.policy.max_tries:
                del self.in_flight[mid]
                failures.append(DeliveryFailed(entry.envelope, entry.tries))
            else:
                self._transmit(entry, now, send)
        return failures


class ReorderBuffer:
    """Releases items in sequence order; ``flush`` gives up on gaps."""

    def __init__(self, first: int = 0):
        self.expected = first
        self._held: dict[int, Any] = {}

    def push(self, seq: int, item: Any) -> list[Any]:
        if seq < self.expected or seq in self._held:
            return []
        self._held[seq] = item
        out = []
        while self.expected in self._held:
            out.append(self._held.pop(self.expected))
            self.expected += 1
        return out

    def flush(self) -> list[Any]:
        out = [self._held[s] for s in sorted(self._held)]
        if self._held:
            self.expected = max(self._held) + 1
        self._held.clear()
        return out

    def __len__(self) -> int:
        return len(self._held)


def ack_link_config(config: LinkSimConfig, seed_offset: int = 1) -> LinkSimConfig:
    """Reverse-direction link: corruption folded into loss."""
    loss = 1.0 - (1.0 - config.loss_prob) * (1.0 - config.corrupt_prob)
    return LinkSimConfig(
        loss_prob=min(loss, 0.999),
        duplicate_prob=config.duplicate_prob,
        reorder_window=config.reorder_window,
        corrupt_prob=0.0,
        seed=config.seed + seed_offset,
        latency=config.latency,
        slot=config.slot,
    )


@dataclass
class UplinkResult:
    stored: list[dict]  # records in per-station sequence order
    accepted_ids: list[int]
    transmissions: int
    delivery_failures: int
    receiver_counts: dict[str, int]
    trace: list[tuple[str, int]]
    end_time: float


def run_uplink(
    records: Iterable[tuple[int, dict]],
    link_config: LinkSimConfig,
    *,
    site: str = "site0",
    policy: RetryPolicy | None = None,
    window: int = 64,
    send_interval: float = 0.0,
    sink: Callable[[dict], None] | None = None,
) -> UplinkResult:
    """Push ``(station_id, record)`` pairs through a simulated lossy session.

    Each record must carry an integer ``seq`` that counts up from 0 per
    station; the receiver restores that order before storing.  Failed
    deliveries are requeued with their original message id, so every
    record is eventually stored exactly once.
    """
    pub_link = LossyLink(link_config)
    ack_link = LossyLink(ack_link_config(link_config))
    publisher = Publisher(site, policy, window)
    publisher_name = f"edge-{site}"
    stored: list[dict] = []
    accepted_ids: list[int] = []
    reorder: dict[int, ReorderBuffer] = {}

    def store(env: TelemetryEnvelope) -> None:
        accepted_ids.append(env.message_id)
        _, station = parse_topic(env.topic)
        buf = reorder.setdefault(station, ReorderBuffer(0))
        for rec in buf.push(int(env.payload["seq"]), env.payload):
            stored.append(rec)
            if sink is not None:
                sink(rec)

    receiver = Receiver(sink=store)
    pending = iter(records)
    requeue: list[TelemetryEnvelope] = []
    failures = 0
    exhausted = False
    now = 0.0
    next_send = 0.0

    while True:
        for line in pub_link.poll(now):
            _, ack = receiver.handle_line(publisher_name, line)
            if ack is not None:
                ack_link.send(now, ack)
        for line in ack_link.poll(now):
            publisher.handle_ack(line)
        for failure in publisher.poll_timeouts(now, pub_link.send):
            failures += 1
            requeue.append(failure.envelope)
        while publisher.can_send and now >= next_send:
            if requeue:
                env = requeue.pop(0)
            elif not exhausted:
                try:
                    station_id, record = next(pending)
                except StopIteration:
                    exhausted = True
                    continue
                env = publisher.make_envelope(station_id, record)
            else:
                break
            publisher.publish(env, now, pub_link.send)
            next_send = now + send_interval
        if exhausted and not requeue and not publisher.in_flight and not len(pub_link) and not len(ack_link):
            break
        candidates = [t for t in (pub_link.next_due(), ack_link.next_due(), publisher.next_deadline()) if t is not None]
        if publisher.can_send and (requeue or not exhausted):
            candidates.append(max(next_send, now))
        now = max(now, min(candidates))

    for station in sorted(reorder):
        for rec in reorder[station].flush():
            stored.append(rec)
            if sink is not None:
                sink(rec)
    return UplinkResult(
        stored=stored,
        accepted_ids=accepted_ids,
        transmissions=publisher.transmissions,
        delivery_failures=failures,
        receiver_counts={s.value: n for s, n in receiver.counts.items()},
        trace=pub_link.trace,
        end_time=now,
    )
