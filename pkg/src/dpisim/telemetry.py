"""ThingSpeak-compatible telemetry: sample encoding, a rate-limited local
ingestion service with append-only persistence, and a streaming client.

Wire surface
------------
``POST /update`` or ``GET /update`` with query/form parameters:

* ``api_key``: the channel write key (required)
* ``field1`` .. ``field8``: numeric values; the client renders them with
  3 decimal places
* ``created_at``: optional timestamp (ISO-8601 or unix seconds); defaults to
  the service clock

The success body is the new entry id as ASCII decimal. A request arriving
inside the minimum update interval is answered 200 with body ``0`` and
nothing is stored. A wrong key is answered 401 with body ``0``; unparseable
field values are answered 400.

``GET /channels/<id>/feeds.json?results=N`` returns::

    {"channel": {...}, "feeds": [{"created_at": "...Z", "entry_id": 1,
                                  "field1": "31.000", ...}]}

with ``created_at`` in ISO-8601 UTC. Feed entries preserve the submitted
field strings byte for byte.

Persistence is one append-only newline-delimited JSON log per channel,
replayed at startup.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
import time
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

MIN_UPDATE_INTERVAL_S = 15.0

# SimSample attribute -> channel field, in wire order.
FIELD_MAP = (
    ("field1", "temperature"),
    ("field2", "p_set"),
    ("field3", "p_pv"),
    ("field4", "p_load"),
    ("field5", "p_batt"),
)


def _iso_utc(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_timestamp(text: str) -> float:
    """Accept unix seconds or ISO-8601; raise ValueError otherwise."""
    try:
        return float(text)
    except ValueError:
        pass
    norm = text.strip().replace("Z", "+00:00")
    dt = datetime.fromisoformat(norm)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def encode_update(sample, write_key: str) -> dict[str, str]:
    """Update parameters for one sample: api_key plus field1..field5 at
    3 decimals (temperature, setpoint, pv, load, battery)."""
    params = {"api_key": write_key}
    for wire_name, attr in FIELD_MAP:
        params[wire_name] = f"{getattr(sample, attr):.3f}"
    return params


def update_path(params: dict[str, str]) -> str:
    return "/update?" + urllib.parse.urlencode(params)


@dataclass(frozen=True)
class ChannelUpdate:
    """One stored entry. ``fields`` keeps the submitted strings verbatim."""

    entry_id: int
    created_at: float            # unix seconds
    fields: dict[str, str]

    @property
    def created_at_iso(self) -> str:
        return _iso_utc(self.created_at)


@dataclass
class Channel:
    id: int
    write_key: str
    read_key: str | None = None
    name: str = ""
    entries: list[ChannelUpdate] = field(default_factory=list)
    last_accepted_at: float | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class TelemetryService:
    """Channel store with the per-channel minimum update interval.

    Channels come from ``channels.json`` in the data directory; a default
    channel (id 1) with a generated write key is created when the file does
    not exist. Every accepted entry is appended to the channel's log and
    replayed on the next startup. Per-channel mutation is serialized, so
    concurrent updates cannot interleave.
    """

    def __init__(self, data_dir: str, min_interval: float = MIN_UPDATE_INTERVAL_S,
                 clock=time.time):
        self.data_dir = data_dir
        self.min_interval = min_interval
        self.clock = clock
        self.channels: dict[int, Channel] = {}
        os.makedirs(data_dir, exist_ok=True)
        self._load_channels()
        for ch in self.channels.values():
            self._replay(ch)

    # -- setup ------------------------------------------------------------

    def _channels_path(self) -> str:
        return os.path.join(self.data_dir, "channels.json")

    def _log_path(self, channel_id: int) -> str:
        return os.path.join(self.data_dir, f"channel_{channel_id}.ndjson")

    def _load_channels(self) -> None:
        path = self._channels_path()
        if not os.path.exists(path):
            key = secrets.token_hex(8).upper()
            default = [{"id": 1, "write_key": key, "read_key": None, "name": "channel-1"}]
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(default, fh, indent=2)
                fh.write("\n")
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        for item in raw:
            ch = Channel(id=int(item["id"]), write_key=item["write_key"],
                         read_key=item.get("read_key"), name=item.get("name", ""))
            self.channels[ch.id] = ch

    def _replay(self, channel: Channel) -> None:
        path = self._log_path(channel.id)
        if not os.path.exists(path):
            return
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                channel.entries.append(ChannelUpdate(
                    entry_id=rec["entry_id"], created_at=rec["ts"], fields=rec["fields"],
                ))
        if channel.entries:
            channel.last_accepted_at = channel.entries[-1].created_at

    # -- operations ---------------------------------------------------------

    def channel_by_write_key(self, key: str) -> Channel | None:
        for ch in self.channels.values():
            if ch.write_key == key:
                return ch
        return None

    def ingest(self, params: dict[str, str], now: float | None = None) -> tuple[int, str]:
        """Apply one update request. Returns (http status, body).

        Body is the stored entry id, or ``0`` when rate-limited or rejected.
        """
        key = params.get("api_key", "")
        channel = self.channel_by_write_key(key)
        if channel is None:
            return 401, "0"
        fields: dict[str, str] = {}
        for name, value in params.items():
            if name.startswith("field"):
                suffix = name[5:]
                if not (suffix.isdigit() and 1 <= int(suffix) <= 8):
                    return 400, "0"
                try:
                    float(value)
                except ValueError:
                    return 400, "0"
                fields[name] = value
        if "created_at" in params:
            try:
                ts = _parse_timestamp(params["created_at"])
            except ValueError:
                return 400, "0"
        else:
            ts = now if now is not None else self.clock()
        with channel.lock:
            if (channel.last_accepted_at is not None
                    and ts - channel.last_accepted_at < self.min_interval):
                return 200, "0"
            entry = ChannelUpdate(entry_id=len(channel.entries) + 1, created_at=ts,
                                  fields=fields)
            with open(self._log_path(channel.id), "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"entry_id": entry.entry_id, "ts": ts,
                                     "fields": fields}) + "\n")
                fh.flush()
            channel.entries.append(entry)
            channel.last_accepted_at = ts
            return 200, str(entry.entry_id)

    def feed(self, channel_id: int, results: int = 100) -> dict:
        """Last ``results`` entries, ascending by entry id, with channel
        metadata. Raises KeyError for an unknown channel."""
        channel = self.channels[channel_id]
        with channel.lock:
            entries = channel.entries[-results:] if results > 0 else []
            feeds = [
                {"created_at": e.created_at_iso, "entry_id": e.entry_id, **e.fields}
                for e in entries
            ]
            return {
                "channel": {
                    "id": channel.id,
                    "name": channel.name,
                    "last_entry_id": len(channel.entries),
                },
                "feeds": feeds,
            }


# --- HTTP layer -----------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> TelemetryService:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):   # keep test output quiet
        pass

    def _respond(self, status: int, body: str, content_type: str = "text/plain") -> None:
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _handle(self, params: dict[str, str]) -> None:
        split = urllib.parse.urlsplit(self.path)
        parts = [p for p in split.path.split("/") if p]
        if parts == ["update"]:
            status, body = self.service.ingest(params)
            self._respond(status, body)
            return
        if (len(parts) == 3 and parts[0] == "channels" and parts[2] == "feeds.json"
                and parts[1].isdigit()):
            try:
                results = int(params.get("results", "100"))
            except ValueError:
                self._respond(400, "bad results parameter")
                return
            try:
                doc = self.service.feed(int(parts[1]), results)
            except KeyError:
                self._respond(404, "unknown channel")
                return
            self._respond(200, json.dumps(doc), content_type="application/json")
            return
        self._respond(404, "not found")

    def _query_params(self) -> dict[str, str]:
        split = urllib.parse.urlsplit(self.path)
        return {k: v[-1] for k, v in urllib.parse.parse_qs(split.query).items()}

    def do_GET(self):
        self._handle(self._query_params())

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length).decode("utf-8") if length else ""
        params = self._query_params()
        params.update({k: v[-1] for k, v in urllib.parse.parse_qs(body).items()})
        self._handle(params)


class TelemetryServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], service: TelemetryService):
        super().__init__(address, _Handler)
        self.service = service


def serve_background(service: TelemetryService, host: str = "127.0.0.1",
                     port: int = 0) -> tuple[TelemetryServer, threading.Thread]:
    """Start the service on a daemon thread; returns (server, thread).

    Stop it with ``server.shutdown()``. Port 0 binds an ephemeral port,
    readable from ``server.server_address``.
    """
    server = TelemetryServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


# --- Client ---------------------------------------------------------------------

class TelemetryClient:
    """Update client for a single channel, single-flight by construction.

    ``stream`` decimates a sample series to one update per ``min_interval``
    of simulation time, forwarding the most recent sample at each slot with
    a ``created_at`` mapped from simulation time onto ``epoch``.
    """

    def __init__(self, base_url: str, write_key: str,
                 min_interval: float = MIN_UPDATE_INTERVAL_S, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.write_key = write_key
        self.min_interval = min_interval
        self.timeout = timeout

    def send(self, sample, created_at: float | None = None) -> int:
        """Post one sample; returns the entry id (0 when rate-limited)."""
        params = encode_update(sample, self.write_key)
        if created_at is not None:
            params["created_at"] = f"{created_at:.3f}"
        data = urllib.parse.urlencode(params).encode("ascii")
        req = urllib.request.Request(self.base_url + "/update", data=data, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return int(resp.read().decode("ascii").strip() or "0")

    def stream(self, samples, epoch: float | None = None) -> int:
        """Forward a decimated sample series; returns the accepted count."""
        if epoch is None:
            epoch = time.time()
        accepted = 0
        next_slot = None
        for sample in samples:
            if next_slot is not None and sample.t < next_slot:
                continue
            if self.send(sample, created_at=epoch + sample.t) > 0:
                accepted += 1
            next_slot = sample.t + self.min_interval
        return accepted
