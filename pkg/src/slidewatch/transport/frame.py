"""Station -> edge wire frame (30 bytes, big-endian).

    offset  size  field
    0       2     magic 0xA5 0x5A
    2       1     version (1)
    3       2     station_id, unsigned
    5       2     sequence, unsigned, wraps at 2**16
    7       8     epoch, unsigned ms
    15      12    east, north, up: signed micrometres
    27      1     fix quality
    28      2     CRC-16/CCITT-FALSE over bytes 0..27

The CRC is checked before any header field so that every corrupted
frame is reported as :class:`BadCrc`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

from .crc import crc16_ccitt_false

MAGIC = b"\xa5\x5a"
VERSION = 1
FRAME_SIZE = 30
_BODY = struct.Struct(">2sBHHQiiiB")
_CRC = struct.Struct(">H")
_I32 = (-(2**31), 2**31 - 1)


class FrameError(ValueError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class Truncated(FrameError):
    pass


class BadCrc(FrameError):
    pass


@dataclass(frozen=True)
class StationFrame:
    station_id: int
    sequence: int
    epoch: int  # ms
    east_um: int
    north_um: int
    up_um: int
    fix_quality: int

    @classmethod
    def from_mm(cls, station_id, sequence, epoch, east, north, up, fix_quality) -> StationFrame:
        return cls(
            station_id, sequence % 65536, epoch, round(east * 1000), round(north * 1000), round(up * 1000), fix_quality
        )

    @property
    def displacement_mm(self) -> tuple[float, float, float]:
        return self.east_um / 1000.0, self.north_um / 1000.0, self.up_um / 1000.0


def encode_frame(frame: StationFrame) -> bytes:
    if not 0 <= frame.station_id < 65536:
        raise ValueError("station_id out of range")
    if not 0 <= frame.sequence < 65536:
        raise ValueError("sequence out of range")
    if not 0 <= frame.epoch < 2**64:
        raise ValueError("epoch out of range")
    for v in (frame.east_um, frame.north_um, frame.up_um):
        if not _I32[0] <= v <= _I32[1]:
            raise ValueError(f"displacement {v} um exceeds 32-bit range")
    if not 0 <= frame.fix_quality < 256:
        raise ValueError("fix_quality out of range")
    body = _BODY.pack(
        MAGIC,
        VERSION,
        frame.station_id,
        frame.sequence,
        frame.epoch,
        frame.east_um,
        frame.north_um,
        frame.up_um,
        frame.fix_quality,
    )
    return body + _CRC.pack(crc16_ccitt_false(body))


def decode_frame(data: bytes) -> StationFrame:
    if len(data) < FRAME_SIZE:
        raise Truncated(f"{len(data)} bytes, frame needs {FRAME_SIZE}")
    if len(data) > FRAME_SIZE:
        raise FrameError(f"{len(data) - FRAME_SIZE} trailing bytes")
    body, (crc,) = data[:-2], _CRC.unpack(data[-2:])
    if crc16_ccitt_false(body) != crc:
        raise BadCrc(f"crc {crc:#06x} != computed {crc16_ccitt_false(body):#06x}")
    magic, version, station, seq, epoch, east, north, up, fix = _BODY.unpack(body)
    if magic != MAGIC:
        raise BadMagic(magic.hex())
    if version != VERSION:
        raise BadVersion(str(version))
    return StationFrame(station, seq, epoch, east, north, up, fix)


def iter_frames(data: bytes) -> Iterator[bytes]:
    """Split a concatenated frame capture into 30-byte chunks; a short tail raises."""
    for start in range(0, len(data), FRAME_SIZE):
        chunk = data[start : start + FRAME_SIZE]
        if len(chunk) < FRAME_SIZE:
            raise Truncated(f"capture ends with a {len(chunk)}-byte fragment")
        yield chunk
