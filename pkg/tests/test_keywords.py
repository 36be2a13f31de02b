"""Keyword extraction: the local ranker against a brute-force oracle, the
provider path with lenient parsing, and the silent fallback."""

import re

import pytest
from hypothesis import given, strategies as st

from quip_engine.errors import ProviderFailure, SchemaViolation
from quip_engine.keywords import (
    KeywordEngine,
    load_stopwords,
    local_extract,
    parse_term_list,
    tokenize,
)
from quip_engine.providers import FailingLlmProvider, MockLlmProvider
from quip_engine.transcript import Sentence

STOPWORDS = load_stopwords()


def sentences(*texts):
    return [Sentence(utterance_id=1, index=i, text=t) for i, t in enumerate(texts)]


def oracle_rank(sentence_texts, stopwords, count):
    """Independent brute-force token scorer used as the reference."""
    tokens = []
    for text in sentence_texts:
        tokens += re.findall(r"\w+(?:'\w+)*", text.lower())
    freq, first = {}, {}
    for pos, tok in enumerate(tokens):
        if tok in stopwords:
            continue
        freq[tok] = freq.get(tok, 0) + 1
        first.setdefault(tok, pos)
    ranked = sorted(freq, key=lambda t: (-freq[t], first[t], t))
    return ranked[:count]


# -- local_extract -----------------------------------------------------------


def test_local_extract_frequency_then_first_occurrence():
    assert local_extract("a a b".split(), set(), 2) == ["a", "b"]


def test_local_extract_drops_stopwords():
    tokens = "the cat sat on the mat".split()
    assert local_extract(tokens, {"the", "on"}, 6) == ["cat", "sat", "mat"]


def test_local_extract_tie_breaks_by_first_occurrence():
    assert local_extract("x y".split(), set(), 1) == ["x"]


def test_local_extract_truncates_to_count():
    assert local_extract("a b c d".split(), set(), 2) == ["a", "b"]


def test_fixture_matches_frozen_oracle_values():
    fixture = [
        "I tripped over a plant.",
        "The slides would not load.",
        "The meeting was a disaster.",
        "Everyone laughed at work.",
        "The situation got worse.",
    ]
    tokens = [t for text in fixture for t in tokenize(text)]
    result = local_extract(tokens, STOPWORDS, 6)
    # Frozen output of the brute-force oracle above on this fixture.
    assert result == ["tripped", "plant", "slides", "load", "meeting", "disaster"]
    assert result == oracle_rank(fixture, STOPWORDS, 6)


WORD_POOL = [
    "the", "a", "was", "plant", "slides", "work", "meeting", "party",
    "pizza", "shirt", "llama", "costume", "froze", "laughed", "situation",
]


@given(
    st.lists(
        st.lists(st.sampled_from(WORD_POOL), min_size=1, max_size=8).map(
            lambda ws: " ".join(ws) + "."
        ),
        min_size=0,
        max_size=5,
    ),
    st.integers(min_value=1, max_value=8),
)
def test_local_extract_equals_oracle_on_random_sentences(texts, count):
    tokens = [t for text in texts for t in tokenize(text)]
    assert local_extract(tokens, STOPWORDS, count) == oracle_rank(texts, STOPWORDS, count)


@given(
    st.lists(st.text(alphabet=st.characters(), min_size=0, max_size=40), max_size=6),
    st.integers(min_value=1, max_value=6),
)
def test_local_extract_cardinality_and_distinctness(texts, count):
    tokens = [t for text in texts for t in tokenize(text)]
    result = local_extract(tokens, STOPWORDS, count)
    assert len(result) <= count
    assert len(set(result)) == len(result)


# -- engine-level extraction ---------------------------------------------------


def test_empty_source_gives_empty_set():
    engine = KeywordEngine(llm=MockLlmProvider(seed=1))
    ks, fallback = engine.extract_keywords([], 6, epoch=3)
    assert ks.keywords == () and ks.epoch == 3 and fallback is False


def test_five_sentence_fixture_yields_exactly_six_keywords():
    engine = KeywordEngine(llm=MockLlmProvider(seed=1))
    src = sentences(
        "I tripped over a plant.",
        "The slides would not load.",
        "The meeting was a disaster.",
        "Everyone laughed at work.",
        "The situation got worse.",
    )
    ks, _ = engine.extract_keywords(src, 6, epoch=1)
    assert len(ks.keywords) == 6


def test_keywords_are_grounded_in_source_sentences():
    engine = KeywordEngine()
    src = sentences("The llama ate my homework.", "The llama looked proud.")
    ks, _ = engine.extract_keywords(src, 6, epoch=1)
    for kw in ks.keywords:
        assert kw.source is not None
        uid, idx = kw.source
        assert kw.term in src[idx].text.lower()


def test_keyword_terms_distinct_case_insensitively():
    engine = KeywordEngine()
    src = sentences("Llama llama LLAMA drama.", "Drama everywhere.")
    ks, _ = engine.extract_keywords(src, 6, epoch=1)
    lowered = [k.term.lower() for k in ks.keywords]
    assert len(set(lowered)) == len(lowered)


def test_provider_failure_falls_back_to_local():
    engine = KeywordEngine(llm=FailingLlmProvider())
    src = sentences("The llama ate my homework.")
    ks, fallback = engine.extract_keywords(src, 6, epoch=2)
    assert fallback is True
    assert [k.term for k in ks.keywords] == ["llama", "ate", "homework"]


def test_extract_keywords_rejects_bad_count():
    with pytest.raises(SchemaViolation):
        KeywordEngine().extract_keywords(sentences("Hi there."), 0, epoch=1)


# -- associations ---------------------------------------------------------------


def test_shirt_association_includes_size():
    engine = KeywordEngine(llm=MockLlmProvider(seed=7))
    src = sentences(
        "I was thinking about a nice shirt for you.",
        "The only shirt left is a dinosaur costume.",
    )
    aset = engine.extract_associations("shirt", src, 4, epoch=1)
    assert "size" in aset.associations
    assert len(aset.associations) <= 4


def test_association_preconditions_and_invariants():
    engine = KeywordEngine(llm=MockLlmProvider(seed=7))
    with pytest.raises(SchemaViolation):
        engine.extract_associations("", sentences("Hi."), 4, epoch=1)
    aset = engine.extract_associations("pizza", sentences("Pizza party."), 4, epoch=1)
    assert "pizza" not in aset.associations
    assert len(set(aset.associations)) == len(aset.associations)


def test_associations_deterministic_for_fixed_seed():
    src = sentences("Something about gargoyles.")
    a1 = KeywordEngine(llm=MockLlmProvider(seed=9)).extract_associations("gargoyle", src, 4, 1)
    a2 = KeywordEngine(llm=MockLlmProvider(seed=9)).extract_associations("gargoyle", src, 4, 1)
    assert a1 == a2


def test_association_provider_failure_propagates():
    engine = KeywordEngine(llm=FailingLlmProvider())
    with pytest.raises(ProviderFailure):
        engine.extract_associations("shirt", sentences("Hi."), 4, epoch=1)


# -- lenient parsing -------------------------------------------------------------


def test_parse_term_list_lenient():
    raw = "1. Shirt, size\n- color;  SHIRT \n\nbuttons, "
    assert parse_term_list(raw, 6) == ["shirt", "size", "color", "buttons"]


def test_parse_term_list_truncates():
    assert parse_term_list("a, b, c, d", 2) == ["a", "b"]
