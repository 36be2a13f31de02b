"""Conversation model: segmentation, windowing, and state transitions."""

import pytest
from hypothesis import given, strategies as st

from quip_engine.errors import (
    InvalidConfig,
    InvalidMode,
    RejectedEmpty,
    StateViolation,
    UnknownUtterance,
    WrongMode,
)
from quip_engine.transcript import (
    Conversation,
    ModeConfig,
    normalize_text,
    split_sentences,
)


def make_conv(mode="full_auto", **kw):
    return Conversation("s1", ModeConfig(**kw), mode=mode)


# -- segmentation ----------------------------------------------------------


def test_terminator_segmentation():
    assert split_sentences("I tripped over a plant. My slides froze.") == [
        "I tripped over a plant.",
        "My slides froze.",
    ]


def test_segmentation_handles_all_terminators_and_tail():
    assert split_sentences("Really?! No way. So then what") == [
        "Really?!",
        "No way.",
        "So then what",
    ]


def test_segmentation_is_abbreviation_blind():
    assert split_sentences("Mr. Smith laughed.") == ["Mr.", "Smith laughed."]


def test_segmentation_keeps_mid_token_punctuation_together():
    # A terminator only closes a sentence when followed by whitespace/end.
    assert split_sentences("wait...what? ok 3.5 stars") == ["wait...what?", "ok 3.5 stars"]


@given(st.text(min_size=0, max_size=200))
def test_sentences_rejoin_to_normalized_text(text):
    normalized = normalize_text(text)
    assert " ".join(split_sentences(text)) == normalized


@given(st.text(min_size=1, max_size=200))
def test_sentences_are_nonempty_after_trim(text):
    for s in split_sentences(text):
        assert s.strip() == s and s


# -- ingestion and window ----------------------------------------------------


def test_ingest_segments_and_increments_epoch():
    conv = make_conv()
    u = conv.ingest("partner", "I tripped over a plant. My slides froze.", 10)
    assert [s.text for s in u.sentences] == ["I tripped over a plant.", "My slides froze."]
    assert conv.state.context_epoch == 1
    assert u.id == 1 and u.received_at == 10


def test_ingest_ids_strictly_increase():
    conv = make_conv()
    ids = [conv.ingest("partner", f"line {i}.", i).id for i in range(5)]
    assert ids == sorted(ids) and len(set(ids)) == 5


def test_ingest_rejects_empty_and_whitespace():
    conv = make_conv()
    with pytest.raises(RejectedEmpty):
        conv.ingest("partner", "", 0)
    with pytest.raises(RejectedEmpty):
        conv.ingest("partner", "   \n\t ", 0)


def test_window_holds_last_five_sentences():
    conv = make_conv()
    for i in range(7):
        conv.ingest("partner", f"Sentence number {i}.", i)
    window = conv.window()
    assert len(window.sentences) == 5
    assert window.texts() == [f"Sentence number {i}." for i in range(2, 7)]


def test_window_under_capacity():
    conv = make_conv()
    assert conv.window().texts() == []
    conv.ingest("partner", "One. Two. Three.", 0)
    assert conv.window().texts() == ["One.", "Two.", "Three."]


def test_window_matches_bruteforce_replay_oracle():
    # Oracle: flat list of every sentence in ingestion order, slice the tail.
    conv = make_conv()
    expected = []
    texts = ["A b. C d! E?", "Single one", "Two here. And two more.", "Tail"]
    for i, text in enumerate(texts):
        conv.ingest("partner", text, i)
        expected += split_sentences(text)
        assert conv.window().texts() == expected[-5:]


def test_shown_suggestions_cleared_on_ingest():
    conv = make_conv()
    conv.state.shown_suggestions.add("joke")
    conv.ingest("partner", "Hello there.", 0)
    assert conv.state.shown_suggestions == set()


# -- mode switching and joke mode ---------------------------------------------


def test_set_mode_clears_selections_and_prefix():
    conv = make_conv(mode="bubble")
    conv.ingest("partner", "Hello.", 0)
    conv.select_bubble(1, True)
    conv.state.typed_prefix = "Well, "
    conv.state.shown_suggestions.add("x")
    conv.set_mode("wizard")
    st = conv.state
    assert st.mode == "wizard"
    assert st.selected_bubbles == set()
    assert st.selected_keywords == [] and st.selected_associations == []
    assert st.typed_prefix == "" and st.shown_suggestions == set()


def test_set_mode_same_mode_still_clears():
    conv = make_conv(mode="bubble")
    conv.ingest("partner", "Hello.", 0)
    conv.select_bubble(1, True)
    conv.set_mode("bubble")
    assert conv.state.selected_bubbles == set()


def test_set_mode_preserves_joke_mode():
    conv = make_conv(mode="keywords")
    conv.toggle_joke_mode(True)
    conv.set_mode("bubble")
    assert conv.state.joke_mode is True


def test_set_mode_rejects_unknown():
    with pytest.raises(InvalidMode):
        make_conv().set_mode("turbo")


def test_toggle_joke_mode_events_and_idempotence():
    conv = make_conv()
    assert conv.toggle_joke_mode(True) is True
    assert conv.toggle_joke_mode(True) is False  # no-op
    assert conv.toggle_joke_mode(False) is True


def test_toggle_off_clears_selections():
    conv = make_conv(mode="wizard")
    conv.toggle_joke_mode(True)
    conv.state.selected_keywords.append("shirt")
    conv.state.selected_associations.append("size")
    conv.toggle_joke_mode(False)
    assert conv.state.selected_keywords == []
    assert conv.state.selected_associations == []


def test_toggle_clears_shown_suggestions():
    conv = make_conv()
    conv.state.shown_suggestions.add("x")
    conv.toggle_joke_mode(True)
    assert conv.state.shown_suggestions == set()


# -- selections ---------------------------------------------------------------


def test_select_bubble_membership():
    conv = make_conv(mode="bubble")
    for i in range(8):
        conv.ingest("partner", f"Line {i}.", i)
    conv.select_bubble(4, True)
    conv.select_bubble(7, True)
    assert conv.state.selected_bubbles == {4, 7}
    conv.select_bubble(4, False)
    assert conv.state.selected_bubbles == {7}


def test_select_bubble_wrong_mode():
    conv = make_conv(mode="keywords")
    conv.ingest("partner", "Line.", 0)
    with pytest.raises(WrongMode):
        conv.select_bubble(1, True)


def test_select_bubble_unknown_utterance():
    conv = make_conv(mode="bubble")
    with pytest.raises(UnknownUtterance):
        conv.select_bubble(99, True)


def test_bubble_source_falls_back_to_window():
    conv = make_conv(mode="bubble")
    for i in range(3):
        conv.ingest("partner", f"Line number {i}.", i)
    conv.select_bubble(1, True)
    sentences, source = conv.keyword_source_sentences()
    assert source == "bubbles" and [s.text for s in sentences] == ["Line number 0."]
    conv.select_bubble(1, False)
    sentences, source = conv.keyword_source_sentences()
    assert source == "window"
    assert [s.text for s in sentences] == [f"Line number {i}." for i in range(3)]


def test_association_requires_wizard_and_keyword():
    conv = make_conv(mode="keywords")
    with pytest.raises(WrongMode):
        conv.select_association("size", True)
    conv.set_mode("wizard")
    with pytest.raises(StateViolation):
        conv.select_association("size", True)
    conv.select_keyword("shirt", True)
    conv.select_association("size", True)
    assert conv.state.selected_associations == ["size"]


def test_deselecting_last_keyword_clears_associations():
    conv = make_conv(mode="wizard")
    conv.select_keyword("shirt", True)
    conv.select_association("size", True)
    conv.select_keyword("shirt", False)
    assert conv.state.selected_keywords == []
    assert conv.state.selected_associations == []


def test_typed_prefix_rejected_in_wizard():
    conv = make_conv(mode="wizard")
    with pytest.raises(WrongMode):
        conv.set_typed_prefix("Well, ")


def test_typed_prefix_stored_verbatim_and_clearable():
    conv = make_conv(mode="keywords")
    conv.set_typed_prefix("Well, ")
    assert conv.state.typed_prefix == "Well, "
    assert conv.state.input_field == "Well, "
    conv.set_typed_prefix("")
    assert conv.state.typed_prefix == ""


# -- config -------------------------------------------------------------------


def test_mode_config_defaults_match_interface_constants():
    config = ModeConfig()
    assert config.window_capacity == 5
    assert config.keyword_count == 6
    assert config.suggestion_count == {"bubble": 3, "keywords": 1, "wizard": 3, "full_auto": 1}
    assert config.editing_allowed["wizard"] is False
    assert config.immediate_play == {
        "bubble": False,
        "keywords": False,
        "wizard": True,
        "full_auto": False,
    }


def test_mode_config_rejects_zero_counts():
    with pytest.raises(InvalidConfig):
        ModeConfig(window_capacity=0)
    with pytest.raises(InvalidConfig):
        ModeConfig(keyword_count=-1)


def test_state_serialization_roundtrip():
    conv = make_conv(mode="wizard")
    conv.ingest("partner", "Hello there. General comment.", 5)
    conv.toggle_joke_mode(True)
    conv.select_keyword("hello", True)
    from quip_engine.transcript import SessionState

    data = conv.state.to_dict()
    assert SessionState.from_dict(data).to_dict() == data
