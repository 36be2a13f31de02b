"""Provider contracts for ASR, language-model completion, and TTS.

The default build ships deterministic mock/scripted implementations only;
remote adapters register themselves at deploy time so the repository has
zero network dependencies.
"""

from __future__ import annotations

import asyncio
import time
import zlib
from dataclasses import dataclass, field
from typing import AsyncIterator, Callable, Iterator, Protocol

from .errors import InvalidConfig, ProviderFailure, StreamClosed, TtsFailure
from .keywords import load_stopwords, local_extract, tokenize


@dataclass(frozen=True)
class ProviderConfig:
    kind: str  # asr | llm | tts
    implementation: str = "mock"  # mock | scripted | remote
    endpoint: str | None = None
    credentials: str | None = None
    seed: int | None = None
    timeout_ms: int = 10000
    retry_count: int = 1

    def __post_init__(self):
        if self.kind not in ("asr", "llm", "tts"):
            raise InvalidConfig(f"unknown provider kind {self.kind!r}")
        if self.implementation == "mock" and self.seed is None:
            raise InvalidConfig(f"mock {self.kind} provider requires a seed")
        if self.implementation == "remote" and not self.endpoint:
            raise InvalidConfig(f"remote {self.kind} provider requires an endpoint")


@dataclass(frozen=True)
class TranscriptEvent:
    text: str
    is_final: bool
    speaker: str = "partner"
    timestamp: int = 0


class LlmProvider(Protocol):
    def complete(self, instruction: str, n: int, constraints: dict) -> list[str]: ...


class TtsProvider(Protocol):
    def synthesize(self, text: str, voice: str | None = None) -> int: ...


# ---------------------------------------------------------------------------
# Mock LLM
# ---------------------------------------------------------------------------

_OPENERS = (
    "honestly",
    "frankly",
    "clearly",
    "somehow",
    "allegedly",
    "apparently",
    "officially",
    "statistically",
    "technically",
    "realistically",
)

_SHAPES = (
    "{opener}, this {kw} business is pure {assoc} theater",
    "{opener}, I came for the {kw} and stayed for the {assoc}",
    "{opener}, that {kw} deserves its own {assoc} award",
    "{opener}, the {kw} is carrying this whole {assoc} situation",
    "{opener}, a {kw} with that much {assoc} energy should pay rent",
    "{opener}, my {kw} consultant says the {assoc} is the real problem",
    "{opener}, nothing says {assoc} like a rogue {kw}",
    "{opener}, I would trust that {kw} with my {assoc} any day",
    "{opener}, the {kw} committee has questions about the {assoc}",
    "{opener}, even the {kw} looks embarrassed about the {assoc}",
    "{opener}, we should name the {kw} after its {assoc}",
    "{opener}, that {kw} just set a new {assoc} record",
)

# Hand-rolled association lexicon for familiar everyday nouns; unknown
# keywords fall back to a seeded deterministic pick from the generic pool.
_ASSOCIATION_LEXICON = {
    "shirt": ("size", "color", "buttons", "sleeves", "collar"),
    "costume": ("size", "fabric", "mask", "glitter", "zipper"),
    "dinosaur": ("roar", "scales", "tail", "extinction", "museum"),
    "pizza": ("toppings", "cheese", "crust", "delivery", "pineapple"),
    "pineapple": ("sweetness", "controversy", "spikes", "juice"),
    "job": ("interview", "resume", "salary", "boss", "title"),
    "plant": ("leaves", "dirt", "pot", "watering", "jungle"),
    "slides": ("projector", "clicker", "bullet points", "fonts"),
    "meeting": ("agenda", "minutes", "coffee", "awkward silence"),
    "work": ("deadline", "office", "overtime", "coffee"),
    "party": ("playlist", "snacks", "balloons", "invitations"),
    "store": ("aisles", "checkout", "receipt", "discount"),
}

_GENERIC_ASSOCIATIONS = (
    "timing",
    "style",
    "drama",
    "logistics",
    "vibes",
    "paperwork",
    "aesthetic",
    "chaos",
    "budget",
    "reputation",
)


def _stable_hash(text: str) -> int:
    # zlib.crc32 is stable across processes, unlike builtin str hashing.
    return zlib.crc32(text.encode("utf-8"))


class MockLlmProvider:
    """Deterministic stand-in for the completion provider.

    Output is a pure function of (seed, instruction, n, constraints):
    suggestion texts echo the typed prefix verbatim, splice in one selected
    keyword and association each, and enumerate distinct variants so that
    refresh exclusion is always satisfiable.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._stopwords = load_stopwords()

    def complete(self, instruction: str, n: int, constraints: dict) -> list[str]:
        if n < 1:
            raise ProviderFailure("n must be >= 1")
        task = constraints.get("task", "suggestions")
        if task == "keywords":
            return [self._keywords_response(constraints)]
        if task == "associations":
            return [self._associations_response(constraints)]
        return [self._suggestion(i, constraints) for i in range(n)]

    # Keyword extraction mirrors the local frequency ranking so the mock
    # stays grounded in the supplied conversation.
    def _keywords_response(self, constraints: dict) -> str:
        tokens: list[str] = []
        for sentence in constraints.get("context", []):
            tokens.extend(tokenize(sentence))
        terms = local_extract(tokens, self._stopwords, int(constraints.get("count", 6)))
        return ", ".join(terms)

    def _associations_response(self, constraints: dict) -> str:
        keyword = constraints.get("keyword", "").lower()
        count = int(constraints.get("count", 4))
        known = _ASSOCIATION_LEXICON.get(keyword)
        if known:
            picks = list(known[:count])
        else:
            offset = (_stable_hash(keyword) + self.seed) % len(_GENERIC_ASSOCIATIONS)
            pool = _GENERIC_ASSOCIATIONS[offset:] + _GENERIC_ASSOCIATIONS[:offset]
            picks = [p for p in pool if p != keyword][:count]
        return ", ".join(picks)

    def _suggestion(self, i: int, constraints: dict) -> str:
        prefix = constraints.get("prefix", "")
        keywords = list(constraints.get("keywords", ()))
        associations = list(constraints.get("associations", ()))
        context = list(constraints.get("context", ()))
        if not keywords or not associations:
            tokens: list[str] = []
            for sentence in context:
                tokens.extend(tokenize(sentence))
            fillers = local_extract(tokens, self._stopwords, 2)
            if not keywords:
                keywords = [fillers[0] if fillers else "plot"]
            if not associations:
                associations = [fillers[1] if len(fillers) > 1 else "chaos"]
        # (shape, opener) pairs stay pairwise distinct for i < 120: equal
        # shapes imply i differs by a multiple of 12, and 13k mod 10 != 0
        # for 0 < k < 10, so the opener differs.
        shape = _SHAPES[(i + self.seed) % len(_SHAPES)]
        opener = _OPENERS[(i + i // len(_SHAPES) + self.seed) % len(_OPENERS)]
        if prefix:
            opener = opener.lower()
        else:
            opener = opener.capitalize()
        body = shape.format(
            opener=opener,
            kw=keywords[i % len(keywords)],
            assoc=associations[i % len(associations)],
        )
        text = f"{prefix}{body}"
        span = len(_SHAPES) * len(_OPENERS)
        if i >= span:
            text = f"{text} (variation {i})"
        return text


class FailingLlmProvider:
    """Raises for the first ``fail_times`` calls, then delegates."""

    def __init__(self, inner: LlmProvider | None = None, fail_times: int | None = None):
        self.inner = inner
        self.fail_times = fail_times
        self.calls = 0

    def complete(self, instruction: str, n: int, constraints: dict) -> list[str]:
        self.calls += 1
        if self.fail_times is None or self.calls <= self.fail_times or self.inner is None:
            raise ProviderFailure("injected completion failure")
        return self.inner.complete(instruction, n, constraints)


class SlowLlmProvider:
    """Delays every completion; used to exercise timeout ceilings."""

    def __init__(self, inner: LlmProvider, delay_s: float):
        self.inner = inner
        self.delay_s = delay_s

    def complete(self, instruction: str, n: int, constraints: dict) -> list[str]:
        time.sleep(self.delay_s)
        return self.inner.complete(instruction, n, constraints)


class TimeBoxedLlm:
    """Bounds synchronous completion calls to ``timeout_ms``.

    Used for the keyword/association path, which runs inline on the
    session command queue: a hung provider degrades to ProviderFailure
    (and thus the local fallback) instead of stalling the session.
    """

    def __init__(self, inner: LlmProvider, timeout_ms: int):
        import concurrent.futures

        self.inner = inner
        self.timeout_ms = timeout_ms
        self._executor = concurrent.futures.ThreadPoolExecutor(
            max_workers=2, thread_name_prefix="llm-timebox"
        )

    def complete(self, instruction: str, n: int, constraints: dict) -> list[str]:
        import concurrent.futures

        future = self._executor.submit(self.inner.complete, instruction, n, constraints)
        try:
            return future.result(timeout=self.timeout_ms / 1000)
        except concurrent.futures.TimeoutError:
            raise ProviderFailure(
                f"completion timed out after {self.timeout_ms} ms"
            ) from None

    def shutdown(self) -> None:
        self._executor.shutdown(wait=False)


# ---------------------------------------------------------------------------
# TTS
# ---------------------------------------------------------------------------


class MockTtsProvider:
    """Records (text, play index) pairs and completes instantly."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.played: list[tuple[str, int]] = []

    def synthesize(self, text: str, voice: str | None = None) -> int:
        if not text:
            raise TtsFailure("cannot synthesize empty text")
        index = len(self.played) + 1
        self.played.append((text, index))
        return index


class FailingTtsProvider:
    def __init__(self, fail_times: int | None = None, inner: TtsProvider | None = None):
        self.fail_times = fail_times
        self.inner = inner or MockTtsProvider()
        self.calls = 0

    def synthesize(self, text: str, voice: str | None = None) -> int:
        self.calls += 1
        if self.fail_times is None or self.calls <= self.fail_times:
            raise TtsFailure("injected synthesis failure")
        return self.inner.synthesize(text, voice)


# ---------------------------------------------------------------------------
# ASR
# ---------------------------------------------------------------------------


def parse_asr_script(path: str) -> list[tuple[int, str, str]]:
    """Parse the scripted-ASR format: ``delay_ms<TAB>speaker<TAB>text``.

    Blank lines and ``#`` comments are skipped. Lines whose speaker column
    starts with ``@`` are replay directives, not ASR content, and are
    skipped here (see service.parse_replay_script).
    """
    rows: list[tuple[int, str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise InvalidConfig(f"malformed script line {line_no}: {line!r}")
            delay, speaker, text = parts
            if speaker.startswith("@"):
                continue
            rows.append((int(delay), speaker, text))
    return rows


class ScriptedAsrSource:
    """Replays a transcript script as a stream of final TranscriptEvents."""

    def __init__(self, path: str):
        self.rows = parse_asr_script(path)

    def events(self) -> Iterator[TranscriptEvent]:
        at = 0
        for delay, speaker, text in self.rows:
            at += delay
            yield TranscriptEvent(text=text, is_final=True, speaker=speaker, timestamp=at)

    async def stream(self) -> AsyncIterator[TranscriptEvent]:
        at = 0
        for delay, speaker, text in self.rows:
            await asyncio.sleep(delay / 1000)
            at += delay
            yield TranscriptEvent(text=text, is_final=True, speaker=speaker, timestamp=at)


class ListAsrSource:
    """In-memory ASR source; may contain partial events and injected faults."""

    def __init__(self, events: list[TranscriptEvent], fail_after: int | None = None):
        self._events = events
        self.fail_after = fail_after

    def events(self) -> Iterator[TranscriptEvent]:
        for i, ev in enumerate(self._events):
            if self.fail_after is not None and i >= self.fail_after:
                raise StreamClosed("injected stream disconnect")
            yield ev

    async def stream(self) -> AsyncIterator[TranscriptEvent]:
        for ev in self.events():
            yield ev


# ---------------------------------------------------------------------------
# Provider construction
# ---------------------------------------------------------------------------

_REMOTE_FACTORIES: dict[str, Callable[[ProviderConfig], object]] = {}


def register_remote_adapter(kind: str, factory: Callable[[ProviderConfig], object]) -> None:
    """Install a deploy-time remote adapter for ``asr``/``llm``/``tts``."""
    _REMOTE_FACTORIES[kind] = factory


@dataclass
class ProviderSet:
    llm: LlmProvider
    tts: TtsProvider
    llm_config: ProviderConfig = field(
        default_factory=lambda: ProviderConfig(kind="llm", seed=0)
    )
    tts_config: ProviderConfig = field(
        default_factory=lambda: ProviderConfig(kind="tts", seed=0)
    )


def build_provider(config: ProviderConfig):
    if config.implementation == "mock":
        if config.kind == "llm":
            return MockLlmProvider(seed=config.seed)
        if config.kind == "tts":
            return MockTtsProvider(seed=config.seed)
        raise InvalidConfig("mock ASR is constructed from a script or event list")
    if config.implementation == "remote":
        factory = _REMOTE_FACTORIES.get(config.kind)
        if factory is None:
            raise InvalidConfig(
                f"no remote {config.kind} adapter registered; the default build is offline-only"
            )
        return factory(config)
    raise InvalidConfig(f"unknown implementation {config.implementation!r} for {config.kind}")


def default_provider_set(seed: int) -> ProviderSet:
    llm_cfg = ProviderConfig(kind="llm", implementation="mock", seed=seed)
    tts_cfg = ProviderConfig(kind="tts", implementation="mock", seed=seed)
    return ProviderSet(
        llm=build_provider(llm_cfg),
        tts=build_provider(tts_cfg),
        llm_config=llm_cfg,
        tts_config=tts_cfg,
    )
