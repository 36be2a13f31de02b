"""Shared test helpers: a manual clock and a synchronous engine harness
that pumps provider work inline, mirroring the service's command loop."""

from __future__ import annotations

import pytest

from quip_engine.engine import SessionEngine
from quip_engine.errors import NoNewSuggestions, ProviderFailure, TtsFailure
from quip_engine.keywords import KeywordEngine, load_stopwords
from quip_engine.providers import MockLlmProvider, MockTtsProvider, ProviderSet
from quip_engine.suggestions import generate_texts, load_templates
from quip_engine.transcript import ModeConfig


class ManualClock:
    def __init__(self, start: int = 0):
        self.ms = start

    def now_ms(self) -> int:
        return self.ms

    def advance(self, delta: int) -> None:
        self.ms += delta


class SyncHarness:
    """Drives a SessionEngine the way the service worker does, but
    synchronously: generation and TTS requests are executed inline and
    their results fed back through apply_* commands."""

    def __init__(self, mode="full_auto", seed=7, llm=None, tts=None, config=None):
        self.clock = ManualClock()
        self.llm = llm if llm is not None else MockLlmProvider(seed=seed)
        self.tts = tts if tts is not None else MockTtsProvider()
        self.config = config or ModeConfig()
        providers = ProviderSet(llm=self.llm, tts=self.tts)
        self.engine = SessionEngine(
            session_id="test",
            config=self.config,
            providers=providers,
            templates=load_templates(),
            keyword_engine=KeywordEngine(llm=self.llm, stopwords=load_stopwords()),
            clock=self.clock,
            mode=mode,
        )
        self.events = list(self.engine.bootstrap_events())

    @property
    def state(self):
        return self.engine.state

    def execute(self, kind, payload=None):
        """Run one command plus any provider work it spawns; returns the
        event drafts produced (and records them on self.events)."""
        produced = []
        result = self.engine.execute(kind, payload or {})
        produced.extend(result.events)
        if result.generation is not None:
            produced.extend(self._pump_generation(result.generation))
        if result.tts is not None:
            produced.extend(self._pump_tts(result.tts))
        self.events.extend(produced)
        return produced

    def _pump_generation(self, req):
        payload = {
            "gen_id": req.gen_id,
            "epoch": req.epoch,
            "cause": req.cause,
            "mode": req.spec.mode,
            "digest": req.spec.digest(),
        }
        try:
            payload["texts"] = generate_texts(
                self.llm, req.instruction, req.constraints, req.needed, req.exclusions
            )
        except NoNewSuggestions as exc:
            payload.update(error="no_new_suggestions", error_message=exc.message)
        except ProviderFailure as exc:
            payload.update(error="provider_failure", error_message=exc.message)
        result = self.engine.execute("apply_generation", payload)
        produced = list(result.events)
        if result.generation is not None:  # stale-epoch retry
            produced.extend(self._pump_generation(result.generation))
        return produced

    def _pump_tts(self, req):
        payload = {"tts_id": req.tts_id, "text": req.text, "cause": req.cause}
        try:
            payload["play_index"] = self.tts.synthesize(req.text)
        except TtsFailure as exc:
            payload.update(error="tts_failure", error_message=exc.message)
        result = self.engine.execute("apply_tts", payload)
        produced = list(result.events)
        if result.generation is not None:
            produced.extend(self._pump_generation(result.generation))
        return produced

    def fire_debounce(self):
        """Advance the clock to the pending deadline and fire it."""
        deadline = self.engine.pending_regen_at
        assert deadline is not None, "no pending auto-regeneration"
        self.clock.ms = max(self.clock.ms, deadline)
        result = self.engine.execute("auto_generate", {"deadline": deadline})
        produced = list(result.events)
        if result.generation is not None:
            produced.extend(self._pump_generation(result.generation))
        self.events.extend(produced)
        return produced

    # convenience ---------------------------------------------------------

    def ingest(self, text, speaker="partner"):
        return self.execute("ingest_text", {"speaker": speaker, "text": text})

    def suggestion_texts(self):
        return [s.text for s in self.engine.suggestions]


@pytest.fixture
def harness():
    return SyncHarness()


def events_of_kind(events, kind):
    return [e for e in events if e.kind == kind]
