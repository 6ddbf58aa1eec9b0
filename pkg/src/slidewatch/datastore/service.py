"""Read-only JSON query service over a :class:`DisplacementStore`."""

from __future__ import annotations

import json
import logging
import re
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .store import DisplacementStore

logger = logging.getLogger(__name__)

UNITS = {"epoch": "ms", "raw": "mm", "filtered": "mm", "magnitude": "mm"}
MAX_EPOCH = 2**63 - 1

_DISPLACEMENTS = re.compile(r"^/api/stations/(\d+)/displacements$")
_LATEST = re.compile(r"^/api/stations/(\d+)/latest$")


class QueryError(ValueError):
    pass


def _int_param(params: dict, name: str, default: int) -> int:
    values = params.get(name)
    if not values:
        return default
    if len(values) > 1:
        raise QueryError(f"parameter {name!r} given more than once")
    try:
        value = int(values[0])
    except ValueError:
        raise QueryError(f"parameter {name!r} must be an integer, got {values[0]!r}") from None
    if not 0 <= value <= MAX_EPOCH:
        raise QueryError(f"parameter {name!r} out of range")
    return value


def handle(store: DisplacementStore, path: str) -> tuple[int, dict]:
    """Route one GET request; returns (status, document).  Kept free of HTTP for testing."""
    url = urlsplit(path)
    params = parse_qs(url.query, keep_blank_values=False)
    route = url.path.rstrip("/") or "/"
    try:
        if route == "/api/stations":
            return HTTPStatus.OK, {"stations": store.stations()}
        if m := _DISPLACEMENTS.match(route):
            station = int(m.group(1))
            lo = _int_param(params, "from", 0)
            hi = _int_param(params, "to", MAX_EPOCH)
            if lo > hi:
                raise QueryError("'from' must not exceed 'to'")
            records = [r.to_dict() for r in store.query_range(station, lo, hi)]
            return HTTPStatus.OK, {"station_id": station, "from": lo, "to": hi, "units": UNITS, "records": records}
        if m := _LATEST.match(route):
            station = int(m.group(1))
            records = store.latest(station)
            if not records:
                return HTTPStatus.NOT_FOUND, {"error": f"no records for station {station}"}
            return HTTPStatus.OK, {
                "station_id": station,
                "epoch": records[0].epoch,
                "units": UNITS,
                "records": [r.to_dict() for r in records],
            }
        if route == "/api/alerts":
            since = _int_param(params, "since", 0)
            alerts = [a.to_dict() for a in store.alerts_since(since)]
            return HTTPStatus.OK, {"since": since, "units": UNITS, "alerts": alerts}
        return HTTPStatus.NOT_FOUND, {"error": f"no such endpoint {url.path!r}"}
    except QueryError as exc:
        return HTTPStatus.BAD_REQUEST, {"error": str(exc)}
    except Exception as exc:  # store failure
        logger.exception("store failure serving %s", path)
        return HTTPStatus.INTERNAL_SERVER_ERROR, {"error": f"store failure: {exc}"}


class _Handler(BaseHTTPRequestHandler):
    store: DisplacementStore

    def do_GET(self) -> None:  # noqa: N802
        status, doc = handle(self.store, self.path)
        body = json.dumps(doc, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _method_not_allowed(self) -> None:
        self.send_error(HTTPStatus.METHOD_NOT_ALLOWED, "read-only service")

    do_POST = do_PUT = do_DELETE = do_PATCH = _method_not_allowed

    def log_message(self, fmt: str, *args) -> None:
        logger.info("%s %s", self.address_string(), fmt % args)


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"bind address must look like host:port, got {bind!r}")
    return host or "127.0.0.1", int(port)


def make_server(store: DisplacementStore, bind: str = "127.0.0.1:8080") -> ThreadingHTTPServer:
    handler = type("StoreHandler", (_Handler,), {"store": store})
    server = ThreadingHTTPServer(parse_bind(bind), handler)
    server.daemon_threads = True
    return server


def serve_in_thread(store: DisplacementStore, bind: str = "127.0.0.1:0") -> tuple[ThreadingHTTPServer, threading.Thread]:
    server = make_server(store, bind)
    thread = threading.Thread(target=server.serve_forever, name="store-service", daemon=True)
    thread.start()
    return server, thread
