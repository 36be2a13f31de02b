"""Server events and the append-only checksummed event log.

The persisted log is the source of truth for a session: each line holds
one event (session_id, seq, kind, payload, ts) plus a CRC of its canonical
JSON encoding. Loading verifies checksums and seq continuity and refuses
corrupt or truncated files, reporting the offending offset.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptLog, IoFailure

EVENT_KINDS = (
    "state_snapshot",
    "transcript_appended",
    "keywords_updated",
    "associations_updated",
    "suggestions_updated",
    "tts_played",
    "error",
    "warning",
)


@dataclass(frozen=True)
class ServerEvent:
    session_id: str
    seq: int
    kind: str
    payload: dict
    ts: int

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "seq": self.seq,
            "kind": self.kind,
            "payload": self.payload,
            "ts": self.ts,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "ServerEvent":
        return cls(
            session_id=data["session_id"],
            seq=data["seq"],
            kind=data["kind"],
            payload=data["payload"],
            ts=data["ts"],
        )


def _crc(canonical: str) -> int:
    return zlib.crc32(canonical.encode("utf-8"))


def encode_line(event: ServerEvent) -> str:
    record = event.to_dict()
    record["crc"] = _crc(event.canonical_json())
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def decode_line(line: str) -> ServerEvent:
    record = json.loads(line)
    crc = record.pop("crc")
    event = ServerEvent.from_dict(record)
    if _crc(event.canonical_json()) != crc:
        raise CorruptLog("checksum mismatch")
    return event


class EventLog:
    """Append-only per-session log file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot open event log {self.path}: {exc}") from exc

    def append(self, event: ServerEvent) -> None:
        try:
            self._fh.write(encode_line(event) + "\n")
            self._fh.flush()
        except OSError as exc:
            raise IoFailure(f"cannot append to event log {self.path}: {exc}") from exc

    def close(self) -> None:
        self._fh.close()


def read_event_log(path: str | Path) -> list[ServerEvent]:
    """Read and verify a persisted event log.

    Raises CorruptLog with the byte offset and line number of the first
    bad record (checksum mismatch, truncation, or a seq gap).
    """
    path = Path(path)
    events: list[ServerEvent] = []
    expected_seq = 1
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read event log {path}: {exc}") from exc
    pos = 0
    line_no = 0
    while pos < len(raw):
        line_no += 1
        newline = raw.find(b"\n", pos)
        if newline == -1:
            # The writer terminates every record; a missing newline means
            # the last record was cut short.
            raise CorruptLog(f"truncated record at line {line_no}", offset=pos, line=line_no)
        line = raw[pos:newline]
        try:
            event = decode_line(line.decode("utf-8"))
        except CorruptLog:
            raise CorruptLog(
                f"checksum mismatch at line {line_no}", offset=pos, line=line_no
            ) from None
        except (ValueError, KeyError, UnicodeDecodeError):
            raise CorruptLog(
                f"unreadable record at line {line_no}", offset=pos, line=line_no
            ) from None
        if event.seq != expected_seq:
            raise CorruptLog(
                f"seq gap at line {line_no}: expected {expected_seq}, found {event.seq}",
                offset=pos,
                line=line_no,
            )
        expected_seq += 1
        events.append(event)
        pos = newline + 1
    return events


def reduce_events(events: list[ServerEvent]) -> dict:
    """Rebuild the session view by replaying persisted events in order."""
    view: dict = {
        "session_id": events[0].session_id if events else None,
        "state": None,
        "utterances": [],
        "keywords": None,
        "associations": None,
        "suggestions": [],
    }
    for ev in events:
        payload = ev.payload
        if ev.kind == "state_snapshot":
            view["state"] = payload["state"]
            # Mode switches and leaving joke mode invalidate the current
            # suggestion batch, mirroring the engine.
            if payload["cause"]["kind"] in ("set_mode", "exit_joke_mode"):
                view["suggestions"] = []
        elif ev.kind == "transcript_appended":
            view["utterances"].append(payload["utterance"])
            view["state"] = payload["state"]
            view["suggestions"] = []  # epoch changed
        elif ev.kind == "keywords_updated":
            view["keywords"] = payload["keywords"] if payload.get("source") != "none" else None
        elif ev.kind == "associations_updated":
            assoc = payload["associations"]
            view["associations"] = assoc if assoc.get("keyword") else None
        elif ev.kind == "suggestions_updated":
            view["suggestions"] = payload["suggestions"]
            view["state"] = payload["state"]
        elif ev.kind == "tts_played":
            view["state"] = payload["state"]
    return view
