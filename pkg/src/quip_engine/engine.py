"""Single-session command executor.

Applies commands to the conversation/keyword/suggestion state and returns
the resulting event drafts plus any provider work (generation, TTS) for
the service layer to run asynchronously. Purely synchronous so the state
machine can be driven and property-tested without an event loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    JokeModeOff,
    NoGenerationAtEpoch,
    ProviderFailure,
    RejectedEmpty,
    SchemaViolation,
    StaleSuggestion,
    UnknownAssociation,
    UnknownKeyword,
)
from .keywords import AssociationSet, KeywordEngine, KeywordSet
from .providers import ProviderSet
from .suggestions import PromptSpec, Suggestion, build_prompt
from .transcript import KEYWORD_MODES, Conversation, ModeConfig, normalize_text

DEBOUNCE_MS = 400

# Mapping of joke-relevant interaction causes used by the analytics coder.
INTERACTION_CAUSES = (
    "enter_joke_mode",
    "exit_joke_mode",
    "select_bubble",
    "select_keyword",
    "select_association",
    "pick_suggestion",
    "set_prefix",
)


@dataclass(frozen=True)
class EventDraft:
    kind: str
    payload: dict
    ts: int


@dataclass(frozen=True)
class GenerationRequest:
    gen_id: int
    epoch: int
    cause: str  # generate | refresh | auto
    instruction: str
    constraints: dict
    needed: int
    exclusions: frozenset[str]
    spec: PromptSpec


@dataclass(frozen=True)
class TtsRequest:
    tts_id: int
    text: str
    cause: str  # speak | accept


@dataclass
class ExecResult:
    events: list[EventDraft] = field(default_factory=list)
    generation: GenerationRequest | None = None
    tts: TtsRequest | None = None


class SessionEngine:
    def __init__(
        self,
        session_id: str,
        config: ModeConfig,
        providers: ProviderSet,
        templates: dict[str, str],
        keyword_engine: KeywordEngine,
        clock,
        mode: str = "full_auto",
    ):
        self.session_id = session_id
        self.config = config
        self.providers = providers
        self.templates = templates
        self.keyword_engine = keyword_engine
        self.clock = clock
        self.conversation = Conversation(session_id, config, mode=mode)
        self.keywords: KeywordSet | None = None
        self.associations: AssociationSet | None = None
        self.suggestions: list[Suggestion] = []
        self.last_generation_epoch: int | None = None
        self.pending_regen_at: int | None = None
        self._gen_counter = 0
        self._tts_counter = 0
        self._suggestion_counter = 0
        self._active_gen_id: int | None = None

    # -- helpers ---------------------------------------------------------

    @property
    def state(self):
        return self.conversation.state

    def now(self) -> int:
        return self.clock.now_ms()

    def _snapshot_event(self, cause: dict) -> EventDraft:
        return EventDraft(
            kind="state_snapshot",
            payload={"cause": cause, "state": self.state.to_dict()},
            ts=self.now(),
        )

    def render_snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "state": self.state.to_dict(),
            "utterances": [u.to_dict() for u in self.conversation.utterances],
            "keywords": self.keywords.to_dict() if self.keywords else None,
            "associations": self.associations.to_dict() if self.associations else None,
            "suggestions": [s.to_dict() for s in self.suggestions],
        }

    def restore_view(self, view: dict) -> None:
        """Adopt a reconstructed session view (event-log replay)."""
        from .transcript import SessionState, Sentence, Utterance

        self.conversation.state = SessionState.from_dict(view["state"])
        utterances = []
        for u in view["utterances"]:
            sentences = tuple(
                Sentence(utterance_id=s["utterance_id"], index=s["index"], text=s["text"])
                for s in u["sentences"]
            )
            utterances.append(
                Utterance(
                    id=u["id"],
                    speaker=u["speaker"],
                    text=u["text"],
                    received_at=u["received_at"],
                    sentences=sentences,
                )
            )
        conv = self.conversation
        conv.utterances = utterances
        conv._by_id = {u.id: u for u in utterances}
        conv._sentences = [s for u in utterances for s in u.sentences]
        conv._next_utterance_id = max((u.id for u in utterances), default=0) + 1
        if view.get("keywords"):
            kw = view["keywords"]
            from .keywords import Keyword

            self.keywords = KeywordSet(
                keywords=tuple(
                    Keyword(
                        term=k["term"],
                        source=(
                            (k["source"]["utterance_id"], k["source"]["index"])
                            if k.get("source")
                            else None
                        ),
                    )
                    for k in kw["keywords"]
                ),
                epoch=kw["epoch"],
            )
        if view.get("associations"):
            a = view["associations"]
            self.associations = AssociationSet(
                keyword=a["keyword"], associations=tuple(a["associations"]), epoch=a["epoch"]
            )
        self.suggestions = [
            Suggestion(
                id=s["id"],
                text=s["text"],
                epoch=s["epoch"],
                mode=s["mode"],
                inputs_digest=s["inputs_digest"],
                shown_at=s["shown_at"],
            )
            for s in view["suggestions"]
        ]
        if self.suggestions:
            self.last_generation_epoch = self.suggestions[-1].epoch
            self._suggestion_counter = max(int(s.id[1:]) for s in self.suggestions)

    # -- keyword/association panels ---------------------------------------

    def _refresh_keywords(self) -> list[EventDraft]:
        """Re-extract the keyword panel for the current context source."""
        st = self.state
        events: list[EventDraft] = []
        if st.mode not in KEYWORD_MODES:
            if self.keywords is not None:
                self.keywords = None
                events.append(
                    EventDraft(
                        kind="keywords_updated",
                        payload={
                            "keywords": {"epoch": st.context_epoch, "keywords": []},
                            "source": "none",
                            "fallback": False,
                        },
                        ts=self.now(),
                    )
                )
            return events
        sentences, source = self.conversation.keyword_source_sentences()
        ks, fallback = self.keyword_engine.extract_keywords(
            sentences, self.config.keyword_count, st.context_epoch
        )
        self.keywords = ks
        events.append(
            EventDraft(
                kind="keywords_updated",
                payload={"keywords": ks.to_dict(), "source": source, "fallback": fallback},
                ts=self.now(),
            )
        )
        if fallback:
            events.append(
                EventDraft(
                    kind="warning",
                    payload={
                        "code": "provider_failure",
                        "message": "keyword provider failed; local extractor used",
                    },
                    ts=self.now(),
                )
            )
        return events

    def _refresh_associations(self) -> list[EventDraft]:
        """Keep the association panel in sync with the last selected keyword."""
        st = self.state
        target = st.selected_keywords[-1] if (st.mode == "wizard" and st.selected_keywords) else None
        if target is None:
            if self.associations is None:
                return []
            self.associations = None
            return [
                EventDraft(
                    kind="associations_updated",
                    payload={
                        "associations": {
                            "keyword": None,
                            "associations": [],
                            "epoch": st.context_epoch,
                        }
                    },
                    ts=self.now(),
                )
            ]
        sentences, _ = self.conversation.keyword_source_sentences()
        try:
            aset = self.keyword_engine.extract_associations(
                target, sentences, self.config.association_count, st.context_epoch
            )
        except ProviderFailure as exc:
            self.associations = AssociationSet(
                keyword=target, associations=(), epoch=st.context_epoch
            )
            return [
                EventDraft(
                    kind="associations_updated",
                    payload={"associations": self.associations.to_dict()},
                    ts=self.now(),
                ),
                EventDraft(
                    kind="warning",
                    payload={"code": "provider_failure", "message": exc.message},
                    ts=self.now(),
                ),
            ]
        self.associations = aset
        return [
            EventDraft(
                kind="associations_updated",
                payload={"associations": aset.to_dict()},
                ts=self.now(),
            )
        ]

    # -- generation --------------------------------------------------------

    def _make_generation(self, cause: str) -> GenerationRequest:
        st = self.state
        if st.mode == "bubble" and st.selected_bubbles:
            context = [
                self.conversation.utterance(uid).text for uid in sorted(st.selected_bubbles)
            ]
        else:
            context = self.conversation.window().texts()
        spec, instruction = build_prompt(st, context, self.config, self.templates)
        self._gen_counter += 1
        self._active_gen_id = self._gen_counter
        self.pending_regen_at = None
        return GenerationRequest(
            gen_id=self._gen_counter,
            epoch=st.context_epoch,
            cause=cause,
            instruction=instruction,
            constraints=spec.constraints(),
            needed=spec.requested_count,
            exclusions=frozenset(st.shown_suggestions),
            spec=spec,
        )

    def _schedule_regen(self) -> None:
        st = self.state
        if not st.joke_mode:
            return
        if st.mode == "wizard" and not st.selected_keywords:
            return
        self.pending_regen_at = self.now() + DEBOUNCE_MS

    def _auto_generation_on_entry(self) -> GenerationRequest | None:
        st = self.state
        if st.mode == "wizard" and not st.selected_keywords:
            return None
        return self._make_generation("auto")

    def _after_epoch_change(self) -> tuple[list[EventDraft], GenerationRequest | None]:
        """Shared bookkeeping after the transcript grew: stale suggestions
        vanish, panels re-extract, full_auto regenerates."""
        self.suggestions = []
        events = self._refresh_keywords()
        events += self._refresh_associations()
        generation = None
        if self.state.joke_mode and self.state.mode == "full_auto":
            generation = self._make_generation("auto")
        return events, generation

    # -- command execution -------------------------------------------------

    def bootstrap_events(self) -> list[EventDraft]:
        events = [self._snapshot_event({"kind": "session_created"})]
        events += self._refresh_keywords()
        return events

    def execute(self, kind: str, payload: dict) -> ExecResult:
        handler = getattr(self, f"_cmd_{kind}", None)
        if handler is None:
            raise SchemaViolation(f"unknown command kind {kind!r}")
        return handler(payload)

    def _cmd_ingest_text(self, payload: dict) -> ExecResult:
        utterance = self.conversation.ingest(
            payload["speaker"], payload["text"], received_at=self.now()
        )
        events = [
            EventDraft(
                kind="transcript_appended",
                payload={
                    "cause": {"kind": "transcript_ingested"},
                    "utterance": utterance.to_dict(),
                    "state": self.state.to_dict(),
                },
                ts=self.now(),
            )
        ]
        more, generation = self._after_epoch_change()
        return ExecResult(events=events + more, generation=generation)

    def _cmd_set_mode(self, payload: dict) -> ExecResult:
        self.conversation.set_mode(payload["mode"])
        self.suggestions = []
        self.last_generation_epoch = None
        self.pending_regen_at = None
        events = [self._snapshot_event({"kind": "set_mode", "mode": payload["mode"]})]
        events += self._refresh_keywords()
        events += self._refresh_associations()
        return ExecResult(events=events)

    def _cmd_toggle_joke_mode(self, payload: dict) -> ExecResult:
        on = payload["on"]
        changed = self.conversation.toggle_joke_mode(on)
        if not changed:
            return ExecResult()
        generation = None
        if on:
            events = [self._snapshot_event({"kind": "enter_joke_mode"})]
            generation = self._auto_generation_on_entry()
        else:
            self.suggestions = []
            self.last_generation_epoch = None
            self.pending_regen_at = None
            events = [self._snapshot_event({"kind": "exit_joke_mode"})]
            events += self._refresh_associations()
        return ExecResult(events=events, generation=generation)

    def _cmd_select_bubble(self, payload: dict) -> ExecResult:
        selected = payload.get("selected", True)
        self.conversation.select_bubble(payload["utterance_id"], selected)
        events = [
            self._snapshot_event(
                {
                    "kind": "select_bubble",
                    "utterance_id": payload["utterance_id"],
                    "selected": selected,
                }
            )
        ]
        events += self._refresh_keywords()
        self._schedule_regen()
        return ExecResult(events=events)

    def _cmd_select_keyword(self, payload: dict) -> ExecResult:
        term = payload["term"].strip().lower()
        selected = payload.get("selected", True)
        if selected and self.state.mode in KEYWORD_MODES:
            # Mode guards run first (inside select_keyword); membership is
            # only meaningful when the mode has a keyword panel at all.
            panel = self.keywords.terms() if self.keywords else []
            if term not in panel:
                raise UnknownKeyword(f"keyword {term!r} is not in the current keyword set")
        self.conversation.select_keyword(term, selected)
        events = [
            self._snapshot_event({"kind": "select_keyword", "term": term, "selected": selected})
        ]
        events += self._refresh_associations()
        self._schedule_regen()
        return ExecResult(events=events)

    def _cmd_select_association(self, payload: dict) -> ExecResult:
        term = payload["term"].strip().lower()
        selected = payload.get("selected", True)
        if selected and self.state.mode == "wizard" and self.state.selected_keywords:
            # Mode/order guards (wizard only, keyword first) take precedence
            # and are enforced by select_association below.
            panel = list(self.associations.associations) if self.associations else []
            if term not in panel:
                raise UnknownAssociation(
                    f"association {term!r} is not in the current association set"
                )
        self.conversation.select_association(term, selected)
        events = [
            self._snapshot_event(
                {"kind": "select_association", "term": term, "selected": selected}
            )
        ]
        self._schedule_regen()
        return ExecResult(events=events)

    def _cmd_set_prefix(self, payload: dict) -> ExecResult:
        text = payload["text"]
        self.conversation.set_typed_prefix(text)
        events = [
            self._snapshot_event(
                {"kind": "set_prefix", "joke_mode": self.state.joke_mode, "length": len(text)}
            )
        ]
        self._schedule_regen()
        return ExecResult(events=events)

    def _cmd_generate(self, payload: dict) -> ExecResult:
        if not self.state.joke_mode:
            raise JokeModeOff("suggestions are only generated in joke mode")
        return ExecResult(generation=self._make_generation("generate"))

    def _cmd_refresh(self, payload: dict) -> ExecResult:
        if not self.state.joke_mode:
            raise JokeModeOff("suggestions are only generated in joke mode")
        if self.last_generation_epoch != self.state.context_epoch:
            raise NoGenerationAtEpoch("nothing to refresh: no generation at this epoch yet")
        return ExecResult(generation=self._make_generation("refresh"))

    def _cmd_accept(self, payload: dict) -> ExecResult:
        sid = payload["suggestion_id"]
        match = next((s for s in self.suggestions if s.id == sid), None)
        if match is None:
            raise StaleSuggestion(f"suggestion {sid!r} is not part of the current epoch")
        tts = None
        if self.config.immediate_play[self.state.mode]:
            self._tts_counter += 1
            tts = TtsRequest(tts_id=self._tts_counter, text=match.text, cause="accept")
        else:
            self.state.input_field = match.text
        events = [
            self._snapshot_event(
                {"kind": "pick_suggestion", "suggestion_id": sid, "text": match.text}
            )
        ]
        return ExecResult(events=events, tts=tts)

    def _cmd_speak(self, payload: dict) -> ExecResult:
        text = payload["text"]
        if not normalize_text(text):
            raise RejectedEmpty("cannot speak empty text")
        self._tts_counter += 1
        return ExecResult(tts=TtsRequest(tts_id=self._tts_counter, text=text, cause="speak"))

    # -- internal commands (posted by the service) --------------------------

    def _cmd_apply_generation(self, payload: dict) -> ExecResult:
        if payload["gen_id"] != self._active_gen_id:
            return ExecResult()  # superseded by a newer request
        if payload.get("error"):
            return ExecResult(
                events=[
                    EventDraft(
                        kind="error",
                        payload={
                            "code": payload["error"],
                            "message": payload.get("error_message", ""),
                            "command": payload["cause"],
                        },
                        ts=self.now(),
                    )
                ]
            )
        if not self.state.joke_mode:
            return ExecResult()
        epoch = payload["epoch"]
        if epoch != self.state.context_epoch:
            # Stale: the context changed mid-flight. Discard and retry once.
            return ExecResult(generation=self._make_generation("auto"))
        suggestions = []
        for text in payload["texts"]:
            self._suggestion_counter += 1
            suggestions.append(
                Suggestion(
                    id=f"s{self._suggestion_counter}",
                    text=text,
                    epoch=epoch,
                    mode=payload["mode"],
                    inputs_digest=payload["digest"],
                    shown_at=self.now(),
                )
            )
        self.suggestions = suggestions
        self.state.shown_suggestions.update(s.text for s in suggestions)
        self.last_generation_epoch = epoch
        return ExecResult(
            events=[
                EventDraft(
                    kind="suggestions_updated",
                    payload={
                        "cause": payload["cause"],
                        "epoch": epoch,
                        "suggestions": [s.to_dict() for s in suggestions],
                        "state": self.state.to_dict(),
                    },
                    ts=self.now(),
                )
            ]
        )

    def _cmd_apply_tts(self, payload: dict) -> ExecResult:
        text = payload["text"]
        if payload.get("error"):
            self.state.input_field = text  # keep the attempted text editable
            return ExecResult(
                events=[
                    EventDraft(
                        kind="error",
                        payload={
                            "code": payload["error"],
                            "message": payload.get("error_message", ""),
                            "command": "speak",
                        },
                        ts=self.now(),
                    ),
                    self._snapshot_event({"kind": "speak_failed"}),
                ]
            )
        self.state.input_field = ""
        self.state.typed_prefix = ""
        events = [
            EventDraft(
                kind="tts_played",
                payload={
                    "text": text,
                    "play_index": payload["play_index"],
                    "state": self.state.to_dict(),
                },
                ts=self.now(),
            )
        ]
        utterance = self.conversation.ingest("user", text, received_at=self.now())
        events.append(
            EventDraft(
                kind="transcript_appended",
                payload={
                    "cause": {"kind": "speak_appended"},
                    "utterance": utterance.to_dict(),
                    "state": self.state.to_dict(),
                },
                ts=self.now(),
            )
        )
        more, generation = self._after_epoch_change()
        return ExecResult(events=events + more, generation=generation)

    def _cmd_auto_generate(self, payload: dict) -> ExecResult:
        deadline = payload["deadline"]
        if self.pending_regen_at != deadline or not self.state.joke_mode:
            return ExecResult()
        self.pending_regen_at = None
        return ExecResult(generation=self._make_generation("auto"))

    def _cmd_emit_error(self, payload: dict) -> ExecResult:
        # Used by the service to log out-of-band failures (e.g. a dropped
        # ASR stream) without corrupting session state.
        return ExecResult(
            events=[EventDraft(kind="error", payload=dict(payload), ts=self.now())]
        )
