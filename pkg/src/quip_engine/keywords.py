"""Keyword and association extraction.

Production runs go through the configured language-model provider; a
deterministic frequency-ranked local extractor covers offline use and is
the fallback whenever the provider fails.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources

from .errors import ProviderFailure, SchemaViolation
from .transcript import Sentence

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*")

KEYWORD_INSTRUCTION = (
    "Extract exactly {count} keywords from the conversation below. "
    "Answer with a comma-separated list of single or two-word keywords only.\n"
    "Conversation: {context}"
)
ASSOCIATION_INSTRUCTION = (
    "List {count} short associations, comma-separated, for the keyword "
    "'{keyword}' as used in this conversation.\nConversation: {context}"
)


def load_stopwords(path: str | None = None) -> frozenset[str]:
    """Load the stopword list (one lowercase token per line, UTF-8)."""
    if path is None:
        text = resources.files("quip_engine.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def local_extract(tokens: list[str], stopwords: frozenset[str] | set[str], count: int) -> list[str]:
    """Rank lowercase non-stopword tokens by (frequency desc, first
    occurrence asc, lexicographic asc) and truncate to ``count``."""
    freq: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for pos, raw in enumerate(tokens):
        term = raw.lower()
        if term in stopwords:
            continue
        freq[term] += 1
        first_seen.setdefault(term, pos)
    ranked = sorted(freq, key=lambda t: (-freq[t], first_seen[t], t))
    return ranked[:count]


def parse_term_list(raw: str, count: int) -> list[str]:
    """Leniently parse a provider response into <= count distinct terms.

    Splits on commas, newlines, and semicolons; trims bullets and list
    numbering; deduplicates case-insensitively.
    """
    terms: list[str] = []
    seen: set[str] = set()
    for piece in re.split(r"[,\n;]+", raw):
        term = piece.strip().strip(".-*•\"' \t")
        term = re.sub(r"^\d+[.)]\s*", "", term).strip().lower()
        if term and term not in seen:
            seen.add(term)
            terms.append(term)
        if len(terms) == count:
            break
    return terms


@dataclass(frozen=True)
class Keyword:
    term: str
    source: tuple[int, int] | None  # (utterance_id, sentence index) when groundable

    def to_dict(self) -> dict:
        source = None
        if self.source is not None:
            source = {"utterance_id": self.source[0], "index": self.source[1]}
        return {"term": self.term, "source": source}


@dataclass(frozen=True)
class KeywordSet:
    keywords: tuple[Keyword, ...]
    epoch: int

    def terms(self) -> list[str]:
        return [k.term for k in self.keywords]

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "keywords": [k.to_dict() for k in self.keywords]}


@dataclass(frozen=True)
class AssociationSet:
    keyword: str
    associations: tuple[str, ...]
    epoch: int

    def to_dict(self) -> dict:
        return {
            "keyword": self.keyword,
            "associations": list(self.associations),
            "epoch": self.epoch,
        }


def _ground(term: str, sentences: list[Sentence]) -> tuple[int, int] | None:
    needle = term.lower()
    for s in sentences:
        if needle in s.text.lower():
            return (s.utterance_id, s.index)
    return None


class KeywordEngine:
    """Extracts keywords/associations via the LLM provider with a silent
    downgrade to the local extractor when the provider fails."""

    def __init__(self, llm=None, stopwords: frozenset[str] | None = None):
        self.llm = llm
        self.stopwords = stopwords if stopwords is not None else load_stopwords()

    def local_keywords(self, sentences: list[Sentence], count: int, epoch: int) -> KeywordSet:
        tokens: list[str] = []
        for s in sentences:
            tokens.extend(tokenize(s.text))
        terms = local_extract(tokens, self.stopwords, count)
        keywords = tuple(Keyword(term=t, source=_ground(t, sentences)) for t in terms)
        return KeywordSet(keywords=keywords, epoch=epoch)

    def extract_keywords(
        self, sentences: list[Sentence], count: int, epoch: int
    ) -> tuple[KeywordSet, bool]:
        """Return (keyword set, used_fallback)."""
        if count < 1:
            raise SchemaViolation("keyword count must be >= 1")
        if not sentences:
            return KeywordSet(keywords=(), epoch=epoch), False
        if self.llm is None:
            return self.local_keywords(sentences, count, epoch), False
        context = " ".join(s.text for s in sentences)
        instruction = KEYWORD_INSTRUCTION.format(count=count, context=context)
        constraints = {
            "task": "keywords",
            "context": [s.text for s in sentences],
            "count": count,
        }
        try:
            raw = self.llm.complete(instruction, 1, constraints)[0]
        except ProviderFailure as exc:
            log.warning("keyword provider failed (%s); using local extractor", exc.message)
            return self.local_keywords(sentences, count, epoch), True
        terms = parse_term_list(raw, count)
        keywords = tuple(Keyword(term=t, source=_ground(t, sentences)) for t in terms)
        return KeywordSet(keywords=keywords, epoch=epoch), False

    def extract_associations(
        self, keyword: str, sentences: list[Sentence], count: int, epoch: int
    ) -> AssociationSet:
        """Associations for a chosen keyword; raises ProviderFailure so the
        caller can surface a warning and show an empty set."""
        if not keyword.strip():
            raise SchemaViolation("keyword must be non-empty")
        if self.llm is None:
            raise ProviderFailure("no language-model provider configured")
        context = " ".join(s.text for s in sentences)
        instruction = ASSOCIATION_INSTRUCTION.format(
            count=count, keyword=keyword, context=context
        )
        constraints = {
            "task": "associations",
            "keyword": keyword,
            "context": [s.text for s in sentences],
            "count": count,
        }
        raw = self.llm.complete(instruction, 1, constraints)[0]
        terms = [t for t in parse_term_list(raw, count + 1) if t != keyword.lower()]
        return AssociationSet(keyword=keyword, associations=tuple(terms[:count]), epoch=epoch)
