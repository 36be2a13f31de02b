"""Randomized command walks over the session state machine.

Every reachable state must satisfy the session invariants, and illegal
transitions must always be rejected with the documented errors.
"""

import random

from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from conftest import SyncHarness
from quip_engine.errors import (
    JokeModeOff,
    NoGenerationAtEpoch,
    QuipError,
    RejectedEmpty,
    StaleSuggestion,
    StateViolation,
    UnknownAssociation,
    UnknownKeyword,
    UnknownUtterance,
    WrongMode,
)
from quip_engine.transcript import MODES

TEXT_POOL = [
    "I tripped over a plant at work.",
    "The slides froze during the meeting.",
    "We got lost in the costume store.",
    "They hired me as a llama groomer.",
    "Pineapple on pizza is controversial.",
    "What a situation this is.",
]


def check_invariants(harness):
    engine = harness.engine
    known = {u.id for u in engine.conversation.utterances}
    problems = engine.state.violations(known)
    assert not problems, problems
    # Window is the tail of the flat sentence stream.
    window = engine.conversation.window()
    flat = engine.conversation.all_sentences()
    assert list(window.sentences) == flat[-engine.config.window_capacity :]
    # Keyword panel stays within the configured cardinality and epoch.
    if engine.keywords is not None:
        assert len(engine.keywords.keywords) <= engine.config.keyword_count
        assert engine.keywords.epoch == engine.state.context_epoch
    # Live suggestions always match the current epoch (staleness guard).
    for s in engine.suggestions:
        assert s.epoch == engine.state.context_epoch
        assert s.text in engine.state.shown_suggestions


class SessionWalk(RuleBasedStateMachine):
    def __init__(self):
        super().__init__()
        self.h = SyncHarness(mode="full_auto")
        self.epoch_history = [0]

    @rule(text=st.sampled_from(TEXT_POOL), speaker=st.sampled_from(["partner", "user"]))
    def ingest(self, text, speaker):
        before = self.h.state.context_epoch
        self.h.ingest(text, speaker=speaker)
        assert self.h.state.context_epoch == before + 1
        # The exclusion set was cleared on the epoch change; anything in it
        # now came from the immediate full_auto regeneration.
        assert self.h.state.shown_suggestions == {s.text for s in self.h.engine.suggestions}

    @rule(mode=st.sampled_from(MODES))
    def set_mode(self, mode):
        joke_before = self.h.state.joke_mode
        self.h.execute("set_mode", {"mode": mode})
        st_ = self.h.state
        assert st_.mode == mode and st_.joke_mode == joke_before
        assert not st_.selected_bubbles and not st_.selected_keywords
        assert not st_.selected_associations and not st_.shown_suggestions

    @rule(on=st.booleans())
    def toggle_joke(self, on):
        was = self.h.state.joke_mode
        events = self.h.execute("toggle_joke_mode", {"on": on})
        if was == on:
            assert events == []
        elif not on:
            assert not self.h.state.selected_keywords
            assert not self.h.state.selected_bubbles

    @rule(uid=st.integers(min_value=1, max_value=12), selected=st.booleans())
    def select_bubble(self, uid, selected):
        known = {u.id for u in self.h.engine.conversation.utterances}
        try:
            self.h.execute("select_bubble", {"utterance_id": uid, "selected": selected})
        except WrongMode:
            assert self.h.state.mode != "bubble"
        except UnknownUtterance:
            assert uid not in known
        else:
            assert self.h.state.mode == "bubble" and (uid in known)

    @rule(pick_known=st.booleans(), selected=st.booleans())
    def select_keyword(self, pick_known, selected):
        panel = self.h.engine.keywords.terms() if self.h.engine.keywords else []
        term = panel[0] if (pick_known and panel) else "zzz-not-a-keyword"
        try:
            self.h.execute("select_keyword", {"term": term, "selected": selected})
        except WrongMode:
            assert self.h.state.mode == "full_auto"
        except UnknownKeyword:
            assert selected and term not in panel

    @rule(pick_known=st.booleans(), selected=st.booleans())
    def select_association(self, pick_known, selected):
        panel = (
            list(self.h.engine.associations.associations)
            if self.h.engine.associations
            else []
        )
        term = panel[0] if (pick_known and panel) else "zzz-not-an-association"
        try:
            self.h.execute("select_association", {"term": term, "selected": selected})
        except WrongMode:
            assert self.h.state.mode != "wizard"
        except StateViolation:
            assert not self.h.state.selected_keywords
        except UnknownAssociation:
            assert selected and term not in panel

    @rule(text=st.sampled_from(["", "Well, ", "So "]))
    def set_prefix(self, text):
        try:
            self.h.execute("set_prefix", {"text": text})
        except WrongMode:
            assert self.h.state.mode == "wizard"
        else:
            assert self.h.state.typed_prefix == text

    @rule()
    def generate(self):
        try:
            self.h.execute("generate")
        except JokeModeOff:
            assert not self.h.state.joke_mode

    @rule()
    def refresh(self):
        engine = self.h.engine
        try:
            self.h.execute("refresh")
        except JokeModeOff:
            assert not self.h.state.joke_mode
        except NoGenerationAtEpoch:
            assert engine.last_generation_epoch != engine.state.context_epoch

    @rule(stale=st.booleans())
    def accept(self, stale):
        suggestions = self.h.engine.suggestions
        sid = "s0" if (stale or not suggestions) else suggestions[0].id
        try:
            self.h.execute("accept", {"suggestion_id": sid})
        except StaleSuggestion:
            assert sid not in {s.id for s in suggestions}

    @rule()
    def maybe_fire_debounce(self):
        if self.h.engine.pending_regen_at is not None:
            self.h.fire_debounce()

    @invariant()
    def state_is_legal(self):
        check_invariants(self.h)


TestSessionWalk = SessionWalk.TestCase
TestSessionWalk.settings = settings(max_examples=25, stateful_step_count=30, deadline=None)


def run_random_walk(steps: int, seed: int) -> int:
    """Seeded random command walk; returns how many commands were rejected."""
    rng = random.Random(seed)
    h = SyncHarness(mode="full_auto")
    rejected = 0
    ops = [
        "ingest", "set_mode", "toggle", "bubble", "keyword", "association",
        "prefix", "generate", "refresh", "accept", "speak", "debounce",
    ]
    for _ in range(steps):
        op = rng.choice(ops)
        try:
            if op == "ingest":
                h.ingest(rng.choice(TEXT_POOL), speaker=rng.choice(["partner", "user"]))
            elif op == "set_mode":
                h.execute("set_mode", {"mode": rng.choice(MODES)})
            elif op == "toggle":
                h.execute("toggle_joke_mode", {"on": rng.random() < 0.6})
            elif op == "bubble":
                h.execute(
                    "select_bubble",
                    {"utterance_id": rng.randint(1, 10), "selected": rng.random() < 0.7},
                )
            elif op == "keyword":
                panel = h.engine.keywords.terms() if h.engine.keywords else []
                term = rng.choice(panel) if panel and rng.random() < 0.8 else "zzz"
                h.execute("select_keyword", {"term": term, "selected": rng.random() < 0.8})
            elif op == "association":
                panel = list(h.engine.associations.associations) if h.engine.associations else []
                term = rng.choice(panel) if panel and rng.random() < 0.8 else "zzz"
                h.execute("select_association", {"term": term, "selected": rng.random() < 0.8})
            elif op == "prefix":
                h.execute("set_prefix", {"text": rng.choice(["", "Well, ", "Oh "])})
            elif op == "generate":
                h.execute("generate")
            elif op == "refresh":
                h.execute("refresh")
            elif op == "accept":
                pool = [s.id for s in h.engine.suggestions] + ["s0"]
                h.execute("accept", {"suggestion_id": rng.choice(pool)})
            elif op == "speak":
                h.execute("speak", {"text": rng.choice(["ha!", "good one.", "   "])})
            elif op == "debounce" and h.engine.pending_regen_at is not None:
                h.fire_debounce()
        except QuipError:
            rejected += 1
        check_invariants(h)
    return rejected


def test_ten_thousand_step_random_walk():
    rejected = run_random_walk(steps=10_000, seed=20250809)
    assert rejected > 0  # illegal transitions occur and are rejected


def test_illegal_transitions_always_rejected():
    h = SyncHarness(mode="wizard")
    h.ingest("I was thinking about a nice shirt for you.")
    # association before any keyword
    try:
        h.execute("select_association", {"term": "size"})
        raised = None
    except QuipError as exc:
        raised = exc
    assert isinstance(raised, StateViolation)
    # typing in wizard
    try:
        h.execute("set_prefix", {"text": "nope"})
        raised = None
    except QuipError as exc:
        raised = exc
    assert isinstance(raised, WrongMode)
    # empty ingestion
    try:
        h.ingest("   ")
        raised = None
    except QuipError as exc:
        raised = exc
    assert isinstance(raised, RejectedEmpty)
