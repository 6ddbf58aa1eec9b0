"""Append-only displacement and alert storage with a read-only query service."""

from .service import QueryError, handle, make_server, parse_bind, serve_in_thread
from .store import (
    AlertRecord,
    DisplacementRecord,
    DisplacementStore,
    Position,
    StoreError,
    StoreWriteError,
    encode_line,
    read_segment,
)

__all__ = [
    "AlertRecord",
    "DisplacementRecord",
    "DisplacementStore",
    "Position",
    "QueryError",
    "StoreError",
    "StoreWriteError",
    "encode_line",
    "handle",
    "make_server",
    "parse_bind",
    "read_segment",
    "serve_in_thread",
]
