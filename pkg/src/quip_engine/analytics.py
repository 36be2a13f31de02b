"""Interaction coding over persisted event logs.

Categorizes joke-relevant server events into a closed ten-category
taxonomy, computes per-session summaries, and exports timelines as CSV,
JSON, or a plot-ready grouped timeline format.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoFailure, SchemaViolation
from .events import ServerEvent, read_event_log

CATEGORIES = (
    "enter_joke_mode",
    "exit_joke_mode",
    "select_bubble",
    "select_keyword",
    "select_association",
    "refresh",
    "pick_suggestion",
    "edit_text",
    "play_tts",
    "type_own",
)

CSV_HEADER = "session_id,t,category"

_CAUSE_CATEGORIES = {
    "enter_joke_mode": "enter_joke_mode",
    "exit_joke_mode": "exit_joke_mode",
    "select_bubble": "select_bubble",
    "select_keyword": "select_keyword",
    "select_association": "select_association",
    "pick_suggestion": "pick_suggestion",
}


@dataclass(frozen=True)
class CodedInteraction:
    session_id: str
    t: int
    category: str
    # Typing outside joke mode is coded type_own and flagged excludable so
    # downstream analysis can drop it, matching how non-joke compositions
    # are treated in the timeline view.
    excludable: bool = False

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "t": self.t,
            "category": self.category,
            "excludable": self.excludable,
        }


@dataclass
class SessionSummary:
    counts: dict[str, int] = field(default_factory=dict)
    jokes_delivered: int = 0
    suggestions_shown: int = 0
    edits_before_play: int = 0

    def to_dict(self) -> dict:
        return {
            "counts": {c: self.counts.get(c, 0) for c in CATEGORIES},
            "jokes_delivered": self.jokes_delivered,
            "suggestions_shown": self.suggestions_shown,
            "edits_before_play": self.edits_before_play,
        }


def code_events(events: list[ServerEvent]) -> list[CodedInteraction]:
    """Map joke-relevant events to coded interactions, in event order.

    Typing with joke mode on codes as edit_text. Typing with joke mode off
    codes as type_own only when a TTS playback follows before the next
    joke-mode entry (the typed comment was actually delivered); it is
    flagged excludable either way.
    """
    coded: list[CodedInteraction] = []
    pending_type_own: list[tuple[int, CodedInteraction]] = []

    def flush_type_own() -> None:
        pending_type_own.clear()

    def deliver_type_own() -> None:
        # Earlier inserts shift later recorded positions right by one each.
        for shift, (position, interaction) in enumerate(pending_type_own):
            coded.insert(position + shift, interaction)
        pending_type_own.clear()

    for ev in events:
        if ev.kind == "state_snapshot":
            cause = ev.payload.get("cause", {})
            kind = cause.get("kind")
            if kind in _CAUSE_CATEGORIES:
                if kind == "enter_joke_mode":
                    flush_type_own()
                coded.append(
                    CodedInteraction(
                        session_id=ev.session_id, t=ev.ts, category=_CAUSE_CATEGORIES[kind]
                    )
                )
            elif kind == "set_prefix":
                if cause.get("joke_mode"):
                    coded.append(
                        CodedInteraction(
                            session_id=ev.session_id, t=ev.ts, category="edit_text"
                        )
                    )
                else:
                    pending_type_own.append(
                        (
                            len(coded),
                            CodedInteraction(
                                session_id=ev.session_id,
                                t=ev.ts,
                                category="type_own",
                                excludable=True,
                            ),
                        )
                    )
        elif ev.kind == "suggestions_updated":
            if ev.payload.get("cause") == "refresh":
                coded.append(
                    CodedInteraction(session_id=ev.session_id, t=ev.ts, category="refresh")
                )
        elif ev.kind == "tts_played":
            deliver_type_own()
            coded.append(
                CodedInteraction(session_id=ev.session_id, t=ev.ts, category="play_tts")
            )
    return coded


def summarize(
    coded: list[CodedInteraction], events: list[ServerEvent] | None = None
) -> SessionSummary:
    """Category counts plus the derived metrics.

    ``suggestions_shown`` needs the raw event log (suggestion displays are
    not themselves coded interactions); it stays 0 when only coded data is
    available.
    """
    counts: Counter[str] = Counter(c.category for c in coded)
    joke_active = False
    jokes_delivered = 0
    edits_before_play = 0
    for i, item in enumerate(coded):
        if item.category == "enter_joke_mode":
            joke_active = True
        elif item.category == "exit_joke_mode":
            joke_active = False
        elif item.category == "play_tts" and joke_active:
            jokes_delivered += 1
        elif item.category == "edit_text":
            for later in coded[i + 1 :]:
                if later.category == "play_tts":
                    edits_before_play += 1
                    break
                if later.category == "pick_suggestion":
                    break
    suggestions_shown = 0
    if events is not None:
        suggestions_shown = sum(
            len(ev.payload.get("suggestions", []))
            for ev in events
            if ev.kind == "suggestions_updated"
        )
    return SessionSummary(
        counts=dict(counts),
        jokes_delivered=jokes_delivered,
        suggestions_shown=suggestions_shown,
        edits_before_play=edits_before_play,
    )


# ---------------------------------------------------------------------------
# Export / load
# ---------------------------------------------------------------------------


def coded_to_csv(coded: list[CodedInteraction]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for item in coded:
        writer.writerow([item.session_id, item.t, item.category])
    return buf.getvalue()


def coded_from_csv(text: str) -> list[CodedInteraction]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER.split(","):
        raise SchemaViolation(f"unexpected CSV header: {header}")
    out = []
    for row in reader:
        if not row:
            continue
        session_id, t, category = row
        if category not in CATEGORIES:
            raise SchemaViolation(f"unknown category {category!r}")
        out.append(CodedInteraction(session_id=session_id, t=int(t), category=category))
    return out


def coded_to_json(coded: list[CodedInteraction]) -> str:
    doc = {"interactions": [c.to_dict() for c in coded]}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def coded_from_json(text: str) -> list[CodedInteraction]:
    doc = json.loads(text)
    return [
        CodedInteraction(
            session_id=item["session_id"],
            t=item["t"],
            category=item["category"],
            excludable=item.get("excludable", False),
        )
        for item in doc["interactions"]
    ]


def coded_to_timeline_json(coded: list[CodedInteraction]) -> str:
    """Group interactions by session (session-id order), preserving the
    within-session event order for timeline plots."""
    groups: dict[str, list[dict]] = {}
    for item in coded:
        groups.setdefault(item.session_id, []).append(
            {"t": item.t, "category": item.category, "excludable": item.excludable}
        )
    doc = {
        "sessions": [
            {"session_id": sid, "interactions": groups[sid]} for sid in sorted(groups)
        ]
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


_FORMATS = {
    "csv": coded_to_csv,
    "json": coded_to_json,
    "timeline-json": coded_to_timeline_json,
}


def export_coded(coded: list[CodedInteraction], fmt: str, path: str | Path) -> Path:
    if fmt not in _FORMATS:
        raise SchemaViolation(f"unknown export format {fmt!r}")
    rendered = _FORMATS[fmt](coded)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rendered, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def export_summary(summary: SessionSummary, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n", "utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def code_log_file(path: str | Path) -> tuple[list[CodedInteraction], list[ServerEvent]]:
    events = read_event_log(path)
    return code_events(events), events
