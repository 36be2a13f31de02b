"""Conversation model: utterance ingestion, sentence windowing, and the
per-session joke-mode state machine shared by all four interface modes."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import (
    InvalidConfig,
    InvalidMode,
    RejectedEmpty,
    SchemaViolation,
    StateViolation,
    UnknownUtterance,
    WrongMode,
)

MODES = ("bubble", "keywords", "wizard", "full_auto")
SPEAKERS = ("partner", "user", "system")

# Modes that expose keyword tuning; full_auto leaves everything to the model.
KEYWORD_MODES = ("bubble", "keywords", "wizard")

_WS_RE = re.compile(r"\s+")
# A sentence runs up to a terminator run (. ! ?) that is followed by
# whitespace or the end of the text; anything left over is its own sentence.
_SENTENCE_RE = re.compile(r"\S.*?(?:[.!?]+(?=\s|$)|$)")


def normalize_text(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return _WS_RE.sub(" ", text).strip()


def split_sentences(text: str) -> list[str]:
    """Terminator-based sentence segmentation on ``. ! ?`` plus end-of-text.

    Deliberately abbreviation-blind. Joining the result with single spaces
    reconstructs the normalized input exactly.
    """
    normalized = normalize_text(text)
    return [m.strip() for m in _SENTENCE_RE.findall(normalized) if m.strip()]


@dataclass(frozen=True)
class Sentence:
    utterance_id: int
    index: int
    text: str

    def to_dict(self) -> dict:
        return {"utterance_id": self.utterance_id, "index": self.index, "text": self.text}


@dataclass(frozen=True)
class Utterance:
    id: int
    speaker: str
    text: str
    received_at: int
    sentences: tuple[Sentence, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "speaker": self.speaker,
            "text": self.text,
            "received_at": self.received_at,
            "sentences": [s.to_dict() for s in self.sentences],
        }


@dataclass(frozen=True)
class ContextWindow:
    sentences: tuple[Sentence, ...]
    capacity: int

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "sentences": [s.to_dict() for s in self.sentences]}


SUGGESTION_COUNTS = {"bubble": 3, "keywords": 1, "wizard": 3, "full_auto": 1}
EDITING_ALLOWED = {"bubble": True, "keywords": True, "wizard": False, "full_auto": True}
IMMEDIATE_PLAY = {"bubble": False, "keywords": False, "wizard": True, "full_auto": False}


@dataclass(frozen=True)
class ModeConfig:
    """Per-mode structural constants of the four interfaces."""

    window_capacity: int = 5
    keyword_count: int = 6
    association_count: int = 4
    suggestion_count: dict[str, int] = field(default_factory=lambda: dict(SUGGESTION_COUNTS))
    editing_allowed: dict[str, bool] = field(default_factory=lambda: dict(EDITING_ALLOWED))
    immediate_play: dict[str, bool] = field(default_factory=lambda: dict(IMMEDIATE_PLAY))

    def __post_init__(self):
        counts = [self.window_capacity, self.keyword_count, self.association_count]
        counts += list(self.suggestion_count.values())
        if any(not isinstance(c, int) or c < 1 for c in counts):
            raise InvalidConfig("all capacities and counts must be integers >= 1")
        for mapping in (self.suggestion_count, self.editing_allowed, self.immediate_play):
            unknown = set(mapping) - set(MODES)
            if unknown:
                raise InvalidConfig(f"unknown modes in config: {sorted(unknown)}")


@dataclass
class SessionState:
    """Mutable per-session UI state machine.

    ``shown_suggestions`` is the refresh-exclusion set and is cleared on
    every context epoch change and on joke-mode toggles.
    """

    session_id: str
    mode: str = "full_auto"
    joke_mode: bool = False
    selected_bubbles: set[int] = field(default_factory=set)
    selected_keywords: list[str] = field(default_factory=list)
    selected_associations: list[str] = field(default_factory=list)
    typed_prefix: str = ""
    context_epoch: int = 0
    shown_suggestions: set[str] = field(default_factory=set)
    input_field: str = ""

    def violations(self, known_utterance_ids: set[int] | None = None) -> list[str]:
        """Return human-readable invariant violations (empty when healthy)."""
        problems = []
        if self.mode not in MODES:
            problems.append(f"invalid mode {self.mode!r}")
        if self.selected_associations and self.mode != "wizard":
            problems.append("associations selected outside wizard mode")
        if self.selected_associations and not self.selected_keywords:
            problems.append("associations selected without a selected keyword")
        if self.selected_bubbles and self.mode != "bubble":
            problems.append("bubbles selected outside bubble mode")
        if known_utterance_ids is not None:
            missing = self.selected_bubbles - known_utterance_ids
            if missing:
                problems.append(f"selected bubbles reference unknown utterances {sorted(missing)}")
        return problems

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "mode": self.mode,
            "joke_mode": self.joke_mode,
            "selected_bubbles": sorted(self.selected_bubbles),
            "selected_keywords": list(self.selected_keywords),
            "selected_associations": list(self.selected_associations),
            "typed_prefix": self.typed_prefix,
            "context_epoch": self.context_epoch,
            "shown_suggestions": sorted(self.shown_suggestions),
            "input_field": self.input_field,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionState":
        return cls(
            session_id=data["session_id"],
            mode=data["mode"],
            joke_mode=data["joke_mode"],
            selected_bubbles=set(data["selected_bubbles"]),
            selected_keywords=list(data["selected_keywords"]),
            selected_associations=list(data["selected_associations"]),
            typed_prefix=data["typed_prefix"],
            context_epoch=data["context_epoch"],
            shown_suggestions=set(data["shown_suggestions"]),
            input_field=data["input_field"],
        )


class Conversation:
    """Owns the transcript, the rolling sentence window, and SessionState.

    All mutations go through the methods below so the state machine
    invariants hold for every reachable state.
    """

    def __init__(self, session_id: str, config: ModeConfig, mode: str = "full_auto"):
        if mode not in MODES:
            raise InvalidMode(f"unknown mode {mode!r}")
        self.config = config
        self.state = SessionState(session_id=session_id, mode=mode)
        self.utterances: list[Utterance] = []
        self._by_id: dict[int, Utterance] = {}
        self._sentences: list[Sentence] = []
        self._next_utterance_id = 1

    # -- transcript ------------------------------------------------------

    def ingest(self, speaker: str, text: str, received_at: int) -> Utterance:
        """Append a transcribed turn, segment it, and advance the epoch."""
        if speaker not in SPEAKERS:
            raise SchemaViolation(f"unknown speaker {speaker!r}")
        normalized = normalize_text(text)
        if not normalized:
            raise RejectedEmpty("utterance text is empty")
        uid = self._next_utterance_id
        self._next_utterance_id += 1
        sentences = tuple(
            Sentence(utterance_id=uid, index=i, text=s)
            for i, s in enumerate(split_sentences(normalized))
        )
        utterance = Utterance(
            id=uid, speaker=speaker, text=normalized, received_at=received_at, sentences=sentences
        )
        self.utterances.append(utterance)
        self._by_id[uid] = utterance
        self._sentences.extend(sentences)
        self.state.context_epoch += 1
        self.state.shown_suggestions.clear()
        return utterance

    def window(self) -> ContextWindow:
        cap = self.config.window_capacity
        return ContextWindow(sentences=tuple(self._sentences[-cap:]), capacity=cap)

    def all_sentences(self) -> list[Sentence]:
        return list(self._sentences)

    def utterance(self, utterance_id: int) -> Utterance:
        try:
            return self._by_id[utterance_id]
        except KeyError:
            raise UnknownUtterance(f"no utterance with id {utterance_id}") from None

    def keyword_source_sentences(self) -> tuple[list[Sentence], str]:
        """Sentences keywords are extracted from, and the source label.

        Bubble mode uses the selected bubbles when any are selected and
        falls back to the context window otherwise.
        """
        if self.state.mode == "bubble" and self.state.selected_bubbles:
            sentences: list[Sentence] = []
            for uid in sorted(self.state.selected_bubbles):
                sentences.extend(self._by_id[uid].sentences)
            return sentences, "bubbles"
        return list(self.window().sentences), "window"

    # -- state machine ---------------------------------------------------

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise InvalidMode(f"unknown mode {mode!r}")
        st = self.state
        st.mode = mode
        st.selected_bubbles.clear()
        st.selected_keywords.clear()
        st.selected_associations.clear()
        st.typed_prefix = ""
        st.shown_suggestions.clear()

    def toggle_joke_mode(self, on: bool) -> bool:
        """Set joke mode; returns False for a no-op toggle."""
        st = self.state
        if st.joke_mode == bool(on):
            return False
        st.joke_mode = bool(on)
        st.shown_suggestions.clear()
        if not on:
            st.selected_bubbles.clear()
            st.selected_keywords.clear()
            st.selected_associations.clear()
        return True

    def select_bubble(self, utterance_id: int, selected: bool) -> None:
        st = self.state
        if st.mode != "bubble":
            raise WrongMode(f"bubble selection is unavailable in {st.mode} mode")
        self.utterance(utterance_id)
        if selected:
            st.selected_bubbles.add(utterance_id)
        else:
            st.selected_bubbles.discard(utterance_id)

    def select_keyword(self, term: str, selected: bool) -> None:
        st = self.state
        if st.mode not in KEYWORD_MODES:
            raise WrongMode(f"keyword tuning is unavailable in {st.mode} mode")
        if selected:
            if term not in st.selected_keywords:
                st.selected_keywords.append(term)
        else:
            if term in st.selected_keywords:
                st.selected_keywords.remove(term)
            if not st.selected_keywords:
                st.selected_associations.clear()

    def select_association(self, term: str, selected: bool) -> None:
        st = self.state
        if st.mode != "wizard":
            raise WrongMode(f"associations are unavailable in {st.mode} mode")
        if not st.selected_keywords:
            raise StateViolation("select a keyword before selecting associations")
        if selected:
            if term not in st.selected_associations:
                st.selected_associations.append(term)
        else:
            if term in st.selected_associations:
                st.selected_associations.remove(term)

    def set_typed_prefix(self, text: str) -> None:
        st = self.state
        if st.mode == "wizard":
            raise WrongMode("wizard mode does not allow typing or editing")
        # The UI has a single text box: typing updates both the generation
        # prefix and the outgoing input field.
        st.typed_prefix = text
        st.input_field = text
