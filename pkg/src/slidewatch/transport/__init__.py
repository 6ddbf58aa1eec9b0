"""Station framing, lossy-link simulation and at-least-once telemetry."""

from .assembler import FrameAssembler, unwrap_sequence
from .crc import crc16_ccitt_false
from .frame import (
    FRAME_SIZE,
    BadCrc,
    BadMagic,
    BadVersion,
    FrameError,
    StationFrame,
    Truncated,
    decode_frame,
    encode_frame,
    iter_frames,
)
from .linksim import LinkSimConfig, LinkStats, LossyLink
from .telemetry import (
    DedupStore,
    DeliveryFailed,
    Publisher,
    Receiver,
    ReceiveStatus,
    ReorderBuffer,
    RetryPolicy,
    TelemetryEnvelope,
    TelemetryError,
    UplinkResult,
    encode_ack,
    parse_ack,
    parse_pub,
    parse_topic,
    run_uplink,
    topic_for,
)

__all__ = [
    "FRAME_SIZE",
    "BadCrc",
    "BadMagic",
    "BadVersion",
    "DedupStore",
    "DeliveryFailed",
    "FrameAssembler",
    "FrameError",
    "LinkSimConfig",
    "LinkStats",
    "LossyLink",
    "Publisher",
    "ReceiveStatus",
    "Receiver",
    "ReorderBuffer",
    "RetryPolicy",
    "StationFrame",
    "TelemetryEnvelope",
    "TelemetryError",
    "Truncated",
    "UplinkResult",
    "crc16_ccitt_false",
    "decode_frame",
    "encode_ack",
    "encode_frame",
    "iter_frames",
    "parse_ack",
    "parse_pub",
    "parse_topic",
    "run_uplink",
    "topic_for",
    "unwrap_sequence",
]
