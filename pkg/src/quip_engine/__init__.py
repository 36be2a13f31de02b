"""quip-engine: a real-time conversational suggestion service that helps
AAC users compose and deliver timely humorous comments.

Four interface modes share one pipeline: live transcript ingestion with a
rolling sentence window, keyword/association extraction, mode-specific
suggestion generation behind provider contracts (with deterministic mocks
for offline use), TTS dispatch, and append-only interaction logging.
"""

from .config import ServiceConfig, load_config
from .engine import SessionEngine
from .errors import QuipError
from .events import ServerEvent, read_event_log
from .keywords import KeywordEngine, local_extract
from .providers import (
    MockLlmProvider,
    MockTtsProvider,
    ProviderConfig,
    ScriptedAsrSource,
    TranscriptEvent,
)
from .service import SessionService, run_replay
from .suggestions import PromptSpec, Suggestion, build_prompt
from .transcript import (
    ContextWindow,
    ModeConfig,
    Sentence,
    SessionState,
    Utterance,
    split_sentences,
)

__version__ = "0.1.0"

__all__ = [
    "ContextWindow",
    "KeywordEngine",
    "MockLlmProvider",
    "MockTtsProvider",
    "ModeConfig",
    "PromptSpec",
    "ProviderConfig",
    "QuipError",
    "ScriptedAsrSource",
    "ServerEvent",
    "ServiceConfig",
    "SessionEngine",
    "SessionService",
    "SessionState",
    "Sentence",
    "Suggestion",
    "TranscriptEvent",
    "Utterance",
    "build_prompt",
    "load_config",
    "local_extract",
    "read_event_log",
    "run_replay",
    "split_sentences",
    "__version__",
]
