"""Session service: lifecycle, per-session single-writer command queues,
event fan-out with resume-by-seq, persistence, and script replay.

Commands are validated synchronously on submit, then executed in order by
one worker task per session. Provider calls (generation, TTS) run off the
queue with a timeout ceiling; their results are posted back onto the same
queue so every state change is serialized and epoch-validated.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterator

from .config import ServiceConfig
from .engine import EventDraft, GenerationRequest, SessionEngine, TtsRequest
from .errors import (
    InvalidConfig,
    NoNewSuggestions,
    ProviderFailure,
    QuipError,
    SchemaViolation,
    SessionNotFound,
    StreamClosed,
    TtsFailure,
)
from .events import EventLog, ServerEvent, read_event_log, reduce_events
from .keywords import KeywordEngine, load_stopwords
from .providers import (
    ProviderSet,
    TimeBoxedLlm,
    TranscriptEvent,
    default_provider_set,
)
from .suggestions import generate_texts, load_templates
from .transcript import MODES, SPEAKERS, ModeConfig

log = logging.getLogger(__name__)


class VirtualClock:
    """Deterministic session clock driven by the replay runner."""

    def __init__(self, start_ms: int = 0):
        self._ms = start_ms

    def now_ms(self) -> int:
        return self._ms

    def set(self, ms: int) -> None:
        self._ms = max(self._ms, int(ms))


class WallClock:
    def __init__(self):
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)


# External command payload schemas: field -> (type, required).
_BOOLABLE = (bool,)
COMMAND_SCHEMAS: dict[str, dict[str, tuple[type, bool]]] = {
    "ingest_text": {"speaker": (str, True), "text": (str, True)},
    "set_mode": {"mode": (str, True)},
    "toggle_joke_mode": {"on": (bool, True)},
    "select_bubble": {"utterance_id": (int, True), "selected": (bool, False)},
    "select_keyword": {"term": (str, True), "selected": (bool, False)},
    "select_association": {"term": (str, True), "selected": (bool, False)},
    "set_prefix": {"text": (str, True)},
    "generate": {},
    "refresh": {},
    "accept": {"suggestion_id": (str, True)},
    "speak": {"text": (str, True)},
}

_SESSION_OVERRIDE_KEYS = {
    "mode",
    "window_capacity",
    "keyword_count",
    "association_count",
    "seed",
    "session_id",
    "time_mode",
}


def validate_command(kind: str, payload: dict) -> None:
    schema = COMMAND_SCHEMAS.get(kind)
    if schema is None:
        raise SchemaViolation(f"unknown command kind {kind!r}")
    if not isinstance(payload, dict):
        raise SchemaViolation("payload must be an object")
    for name, (typ, required) in schema.items():
        if name not in payload:
            if required:
                raise SchemaViolation(f"{kind} payload is missing {name!r}")
            continue
        value = payload[name]
        if typ is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaViolation(f"{kind} field {name!r} must be an integer")
        elif not isinstance(value, typ):
            raise SchemaViolation(f"{kind} field {name!r} must be {typ.__name__}")
    if kind == "ingest_text" and payload["speaker"] not in SPEAKERS:
        raise SchemaViolation(f"unknown speaker {payload['speaker']!r}")


@dataclass
class _CommandItem:
    kind: str
    payload: dict
    client_ts: int | None = None


@dataclass
class SessionRuntime:
    session_id: str
    engine: SessionEngine
    providers: ProviderSet
    clock: object
    log: EventLog | None
    timeout_ms: int
    queue: asyncio.Queue = field(default_factory=asyncio.Queue)
    events: list[ServerEvent] = field(default_factory=list)
    seq: int = 0
    subscribers: dict[int, asyncio.Queue] = field(default_factory=dict)
    worker: asyncio.Task | None = None
    gen_task: asyncio.Task | None = None
    tts_task: asyncio.Task | None = None
    debounce_task: asyncio.Task | None = None
    outstanding: int = 0
    inflight: int = 0
    idle: asyncio.Condition = field(default_factory=asyncio.Condition)
    closed: bool = False


class SessionService:
    def __init__(self, config: ServiceConfig | None = None, provider_factory=None):
        self.config = config or ServiceConfig()
        self.templates = load_templates(self.config.template_file)
        self.stopwords = load_stopwords(self.config.stopword_file)
        self._provider_factory = provider_factory or self._default_factory
        self._sessions: dict[str, SessionRuntime] = {}
        self._sub_ids = itertools.count(1)

    def _default_factory(self, seed: int) -> ProviderSet:
        if self.config.providers != "mock":
            raise InvalidConfig(
                f"provider implementation {self.config.providers!r} is not installed; "
                "the default build supports 'mock'"
            )
        return default_provider_set(seed)

    # -- lifecycle ---------------------------------------------------------

    async def create_session(self, overrides: dict | None = None) -> str:
        overrides = dict(overrides or {})
        unknown = set(overrides) - _SESSION_OVERRIDE_KEYS
        if unknown:
            raise InvalidConfig(f"unknown session overrides: {sorted(unknown)}")
        defaults = self.config.defaults
        mode = overrides.get("mode", defaults["mode"])
        if mode not in MODES:
            raise InvalidConfig(f"unknown mode {mode!r}")
        mode_config = ModeConfig(
            window_capacity=overrides.get("window_capacity", defaults["window_capacity"]),
            keyword_count=overrides.get("keyword_count", defaults["keyword_count"]),
            association_count=overrides.get(
                "association_count", defaults["association_count"]
            ),
        )
        session_id = overrides.get("session_id") or uuid.uuid4().hex
        if not isinstance(session_id, str) or not session_id:
            raise InvalidConfig("session_id must be a non-empty string")
        if session_id in self._sessions:
            raise InvalidConfig(f"session {session_id!r} already exists")
        time_mode = overrides.get("time_mode", "wall")
        if time_mode not in ("wall", "virtual"):
            raise InvalidConfig(f"unknown time_mode {time_mode!r}")
        seed = overrides.get("seed", self.config.seed)
        if not isinstance(seed, int):
            raise InvalidConfig("seed must be an integer")
        clock = VirtualClock() if time_mode == "virtual" else WallClock()
        providers = self._provider_factory(seed)
        engine = SessionEngine(
            session_id=session_id,
            config=mode_config,
            providers=providers,
            templates=self.templates,
            keyword_engine=KeywordEngine(
                llm=TimeBoxedLlm(providers.llm, self.config.timeout_ms),
                stopwords=self.stopwords,
            ),
            clock=clock,
            mode=mode,
        )
        event_log = EventLog(Path(self.config.log_dir) / f"{session_id}.jsonl")
        rt = SessionRuntime(
            session_id=session_id,
            engine=engine,
            providers=providers,
            clock=clock,
            log=event_log,
            timeout_ms=self.config.timeout_ms,
        )
        self._sessions[session_id] = rt
        for draft in engine.bootstrap_events():
            self._emit_draft(rt, draft)
        rt.worker = asyncio.create_task(self._worker(rt), name=f"session-{session_id}")
        return session_id

    async def load_session(self, session_id: str) -> str:
        """Rebuild a session from its persisted event log."""
        if session_id in self._sessions:
            raise InvalidConfig(f"session {session_id!r} is already live")
        path = Path(self.config.log_dir) / f"{session_id}.jsonl"
        events = read_event_log(path)
        view = reduce_events(events)
        last_ts = events[-1].ts if events else 0
        clock = VirtualClock(start_ms=last_ts)
        seed = self.config.seed
        providers = self._provider_factory(seed)
        engine = SessionEngine(
            session_id=session_id,
            config=ModeConfig(
                window_capacity=self.config.defaults["window_capacity"],
                keyword_count=self.config.defaults["keyword_count"],
                association_count=self.config.defaults["association_count"],
            ),
            providers=providers,
            templates=self.templates,
            keyword_engine=KeywordEngine(
                llm=TimeBoxedLlm(providers.llm, self.config.timeout_ms),
                stopwords=self.stopwords,
            ),
            clock=clock,
            mode=view["state"]["mode"] if view["state"] else self.config.defaults["mode"],
        )
        engine.restore_view(view)
        plays = [ev for ev in events if ev.kind == "tts_played"]
        for ev in plays:
            getattr(providers.tts, "played", []).append(
                (ev.payload["text"], ev.payload["play_index"])
            )
        engine._tts_counter = len(plays)
        rt = SessionRuntime(
            session_id=session_id,
            engine=engine,
            providers=providers,
            clock=clock,
            log=EventLog(path),
            timeout_ms=self.config.timeout_ms,
        )
        rt.events = list(events)
        rt.seq = events[-1].seq if events else 0
        self._sessions[session_id] = rt
        rt.worker = asyncio.create_task(self._worker(rt), name=f"session-{session_id}")
        return session_id

    def _get(self, session_id: str) -> SessionRuntime:
        rt = self._sessions.get(session_id)
        if rt is None:
            raise SessionNotFound(f"no session {session_id!r}")
        return rt

    def snapshot(self, session_id: str) -> dict:
        rt = self._get(session_id)
        snap = rt.engine.render_snapshot()
        snap["last_seq"] = rt.seq
        return snap

    def session_events(self, session_id: str) -> list[ServerEvent]:
        return list(self._get(session_id).events)

    async def close_session(self, session_id: str) -> None:
        rt = self._sessions.pop(session_id, None)
        if rt is None:
            return
        rt.closed = True
        for task in (rt.worker, rt.gen_task, rt.tts_task, rt.debounce_task):
            if task and not task.done():
                task.cancel()
        for q in rt.subscribers.values():
            q.put_nowait(None)
        boxed = getattr(rt.engine.keyword_engine, "llm", None)
        if hasattr(boxed, "shutdown"):
            boxed.shutdown()
        if rt.log:
            rt.log.close()

    async def close(self) -> None:
        for sid in list(self._sessions):
            await self.close_session(sid)

    # -- commands ----------------------------------------------------------

    async def submit(
        self, session_id: str, kind: str, payload: dict | None = None, client_ts: int | None = None
    ) -> int:
        rt = self._get(session_id)
        payload = payload or {}
        validate_command(kind, payload)
        ack = rt.seq
        await self._enqueue(rt, _CommandItem(kind=kind, payload=payload, client_ts=client_ts))
        return ack

    async def _enqueue(self, rt: SessionRuntime, item: _CommandItem) -> None:
        rt.outstanding += 1
        await rt.queue.put(item)

    async def _worker(self, rt: SessionRuntime) -> None:
        while True:
            item = await rt.queue.get()
            try:
                result = rt.engine.execute(item.kind, item.payload)
            except QuipError as exc:
                self._emit(
                    rt, "error", {**exc.to_payload(), "command": item.kind}
                )
            except Exception:
                log.exception("command %s failed on session %s", item.kind, rt.session_id)
                self._emit(
                    rt,
                    "error",
                    {"code": "internal_error", "message": "unexpected failure", "command": item.kind},
                )
            else:
                for draft in result.events:
                    self._emit_draft(rt, draft)
                if result.generation is not None:
                    self._start_generation(rt, result.generation)
                if result.tts is not None:
                    self._start_tts(rt, result.tts)
                self._arm_debounce(rt)
            finally:
                rt.outstanding -= 1
                await self._notify_idle(rt)

    async def _notify_idle(self, rt: SessionRuntime) -> None:
        async with rt.idle:
            rt.idle.notify_all()

    async def drain(self, session_id: str) -> None:
        """Wait until the session has no queued or in-flight work."""
        rt = self._get(session_id)
        async with rt.idle:
            await rt.idle.wait_for(lambda: rt.outstanding == 0 and rt.inflight == 0)

    # -- events ------------------------------------------------------------

    def _emit_draft(self, rt: SessionRuntime, draft: EventDraft) -> None:
        self._emit(rt, draft.kind, draft.payload, ts=draft.ts)

    def _emit(self, rt: SessionRuntime, kind: str, payload: dict, ts: int | None = None) -> None:
        rt.seq += 1
        event = ServerEvent(
            session_id=rt.session_id,
            seq=rt.seq,
            kind=kind,
            payload=payload,
            ts=rt.clock.now_ms() if ts is None else ts,
        )
        rt.events.append(event)
        if rt.log:
            rt.log.append(event)
        for q in rt.subscribers.values():
            q.put_nowait(event)

    async def subscribe(
        self, session_id: str, from_seq: int = 0
    ) -> AsyncIterator[ServerEvent]:
        """Yield events with seq > from_seq: persisted history, then live."""
        rt = self._get(session_id)
        sub_id = next(self._sub_ids)
        queue: asyncio.Queue = asyncio.Queue()
        rt.subscribers[sub_id] = queue
        try:
            last = from_seq
            for event in list(rt.events):
                if event.seq > last:
                    yield event
                    last = event.seq
            while True:
                event = await queue.get()
                if event is None:
                    return
                if event.seq <= last:
                    continue
                yield event
                last = event.seq
        finally:
            rt.subscribers.pop(sub_id, None)

    # -- provider work -----------------------------------------------------

    def _start_generation(self, rt: SessionRuntime, req: GenerationRequest) -> None:
        if rt.gen_task and not rt.gen_task.done():
            rt.gen_task.cancel()  # a newer request supersedes the old one
        rt.inflight += 1
        rt.gen_task = asyncio.create_task(self._run_generation(rt, req))

    async def _run_generation(self, rt: SessionRuntime, req: GenerationRequest) -> None:
        payload = {
            "gen_id": req.gen_id,
            "epoch": req.epoch,
            "cause": req.cause,
            "mode": req.spec.mode,
            "digest": req.spec.digest(),
        }
        try:
            try:
                texts = await asyncio.wait_for(
                    asyncio.to_thread(
                        generate_texts,
                        rt.providers.llm,
                        req.instruction,
                        req.constraints,
                        req.needed,
                        req.exclusions,
                    ),
                    timeout=rt.timeout_ms / 1000,
                )
                payload["texts"] = texts
            except asyncio.CancelledError:
                return  # superseded: the result must not be applied
            except NoNewSuggestions as exc:
                payload.update(error="no_new_suggestions", error_message=exc.message)
            except ProviderFailure as exc:
                payload.update(error="provider_failure", error_message=exc.message)
            except asyncio.TimeoutError:
                payload.update(
                    error="provider_failure",
                    error_message=f"completion timed out after {rt.timeout_ms} ms",
                )
            except Exception as exc:  # provider bugs must not kill the session
                log.exception("generation failed on session %s", rt.session_id)
                payload.update(error="provider_failure", error_message=str(exc))
            await self._enqueue(rt, _CommandItem(kind="apply_generation", payload=payload))
        finally:
            rt.inflight -= 1
            await self._notify_idle(rt)

    def _start_tts(self, rt: SessionRuntime, req: TtsRequest) -> None:
        previous = rt.tts_task
        rt.inflight += 1
        rt.tts_task = asyncio.create_task(self._run_tts(rt, req, previous))

    async def _run_tts(
        self, rt: SessionRuntime, req: TtsRequest, previous: asyncio.Task | None
    ) -> None:
        # Playbacks are strictly ordered per session.
        if previous is not None and not previous.done():
            await asyncio.wait({previous})
        payload = {"tts_id": req.tts_id, "text": req.text, "cause": req.cause}
        try:
            try:
                index = await asyncio.wait_for(
                    asyncio.to_thread(rt.providers.tts.synthesize, req.text),
                    timeout=rt.timeout_ms / 1000,
                )
                payload["play_index"] = index
            except asyncio.CancelledError:
                return
            except TtsFailure as exc:
                payload.update(error="tts_failure", error_message=exc.message)
            except asyncio.TimeoutError:
                payload.update(
                    error="tts_failure",
                    error_message=f"synthesis timed out after {rt.timeout_ms} ms",
                )
            except Exception as exc:
                log.exception("tts failed on session %s", rt.session_id)
                payload.update(error="tts_failure", error_message=str(exc))
            await self._enqueue(rt, _CommandItem(kind="apply_tts", payload=payload))
        finally:
            rt.inflight -= 1
            await self._notify_idle(rt)

    # -- debounced auto-regeneration ----------------------------------------

    def _arm_debounce(self, rt: SessionRuntime) -> None:
        deadline = rt.engine.pending_regen_at
        if deadline is None or isinstance(rt.clock, VirtualClock):
            return  # virtual time is advanced explicitly by the replay runner
        if rt.debounce_task and not rt.debounce_task.done():
            rt.debounce_task.cancel()
        rt.debounce_task = asyncio.create_task(self._fire_debounce(rt, deadline))

    async def _fire_debounce(self, rt: SessionRuntime, deadline: int) -> None:
        delay = max(0, deadline - rt.clock.now_ms()) / 1000
        try:
            await asyncio.sleep(delay)
        except asyncio.CancelledError:
            return
        if rt.engine.pending_regen_at == deadline:
            await self._enqueue(
                rt, _CommandItem(kind="auto_generate", payload={"deadline": deadline})
            )

    async def advance_virtual(self, session_id: str, to_ms: int) -> None:
        """Advance a virtual-clock session, firing due debounce deadlines."""
        rt = self._get(session_id)
        if not isinstance(rt.clock, VirtualClock):
            raise InvalidConfig("advance_virtual requires a virtual-clock session")
        await self.drain(session_id)
        while True:
            deadline = rt.engine.pending_regen_at
            if deadline is None or deadline > to_ms:
                break
            rt.clock.set(deadline)
            await self._enqueue(
                rt, _CommandItem(kind="auto_generate", payload={"deadline": deadline})
            )
            await self.drain(session_id)
        rt.clock.set(to_ms)

    # -- ASR pump ------------------------------------------------------------

    async def pump_asr(self, session_id: str, source) -> None:
        """Forward final transcript events into the session; partials are
        display-only and never mutate state."""
        rt = self._get(session_id)
        try:
            async for tev in source.stream():
                if not tev.is_final:
                    continue
                await self.submit(
                    session_id,
                    "ingest_text",
                    {"speaker": tev.speaker, "text": tev.text},
                )
        except StreamClosed as exc:
            await self._enqueue(
                rt,
                _CommandItem(
                    kind="emit_error",
                    payload={"code": exc.code, "message": exc.message, "command": "asr_stream"},
                ),
            )
        except ProviderFailure as exc:
            await self._enqueue(
                rt,
                _CommandItem(
                    kind="emit_error",
                    payload={"code": exc.code, "message": exc.message, "command": "asr_stream"},
                ),
            )


# ---------------------------------------------------------------------------
# Script replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayLine:
    at_ms: int
    kind: str  # utterance | command
    speaker: str = ""
    text: str = ""
    command: str = ""
    payload: dict = field(default_factory=dict)


def parse_replay_script(path: str | Path) -> list[ReplayLine]:
    """Parse a replay script.

    The format extends the scripted-ASR format (``delay_ms<TAB>speaker
    <TAB>text``) with directive lines whose speaker column is ``@command``
    and whose text column is a JSON payload. A plain ASR script is a valid
    replay script.
    """
    lines: list[ReplayLine] = []
    at = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise InvalidConfig(f"malformed script line {line_no}: {line!r}")
            delay, actor, rest = parts
            at += int(delay)
            if actor.startswith("@"):
                payload = json.loads(rest) if rest.strip() else {}
                lines.append(
                    ReplayLine(at_ms=at, kind="command", command=actor[1:], payload=payload)
                )
            else:
                if actor not in SPEAKERS:
                    raise InvalidConfig(f"unknown speaker {actor!r} at line {line_no}")
                lines.append(ReplayLine(at_ms=at, kind="utterance", speaker=actor, text=rest))
    return lines


def _resolve_sugar(rt: SessionRuntime, command: str, payload: dict) -> dict:
    """Expand replay-script conveniences into concrete payloads."""
    payload = dict(payload)
    if command == "accept" and "index" in payload:
        index = payload.pop("index")
        suggestions = rt.engine.suggestions
        if not 0 <= index < len(suggestions):
            raise InvalidConfig(f"accept index {index} out of range")
        payload["suggestion_id"] = suggestions[index].id
    if command == "speak" and payload.pop("from_input", False):
        payload["text"] = rt.engine.state.input_field
    if command == "set_prefix" and "append_to_input" in payload:
        payload["text"] = rt.engine.state.input_field + payload.pop("append_to_input")
    return payload


async def run_replay(
    service: SessionService,
    script_path: str | Path,
    session_id: str | None = None,
    overrides: dict | None = None,
) -> str:
    """Deterministically replay a script under a virtual clock.

    Utterance lines are wrapped as final TranscriptEvents (the scripted-ASR
    path); command lines are submitted in order. The session is drained
    after each line so re-running a script yields a byte-identical log.
    """
    lines = parse_replay_script(script_path)
    session_id = session_id or Path(script_path).stem
    overrides = dict(overrides or {})
    overrides.setdefault("session_id", session_id)
    overrides["time_mode"] = "virtual"
    sid = await service.create_session(overrides)
    rt = service._get(sid)
    for line in lines:
        await service.advance_virtual(sid, line.at_ms)
        if line.kind == "utterance":
            tev = TranscriptEvent(
                text=line.text, is_final=True, speaker=line.speaker, timestamp=line.at_ms
            )
            if tev.is_final:
                await service.submit(
                    sid, "ingest_text", {"speaker": tev.speaker, "text": tev.text}
                )
        else:
            payload = _resolve_sugar(rt, line.command, line.payload)
            await service.submit(sid, line.command, payload)
        await service.drain(sid)
    while rt.engine.pending_regen_at is not None:
        await service.advance_virtual(sid, rt.engine.pending_regen_at)
    return sid
