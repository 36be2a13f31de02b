"""Error hierarchy shared across the engine.

Every error carries a stable machine-readable ``code`` that is surfaced
verbatim in error events and HTTP responses.
"""

from __future__ import annotations


class QuipError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_payload(self) -> dict:
        payload = {"code": self.code, "message": self.message}
        if self.details:
            payload["details"] = self.details
        return payload


class SessionNotFound(QuipError):
    code = "session_not_found"


class RejectedEmpty(QuipError):
    code = "rejected_empty"


class InvalidMode(QuipError):
    code = "invalid_mode"


class WrongMode(QuipError):
    code = "wrong_mode"


class UnknownUtterance(QuipError):
    code = "unknown_utterance"


class UnknownKeyword(QuipError):
    code = "unknown_keyword"


class UnknownAssociation(QuipError):
    code = "unknown_association"


class StateViolation(QuipError):
    code = "state_violation"


class SchemaViolation(QuipError):
    code = "schema_violation"


class InvalidConfig(QuipError):
    code = "invalid_config"


class JokeModeOff(QuipError):
    code = "joke_mode_off"


class StaleSuggestion(QuipError):
    code = "stale_suggestion"


class NoGenerationAtEpoch(QuipError):
    code = "no_generation_at_epoch"


class ProviderFailure(QuipError):
    code = "provider_failure"


class TtsFailure(QuipError):
    code = "tts_failure"


class NoNewSuggestions(QuipError):
    code = "no_new_suggestions"


class StreamClosed(QuipError):
    code = "stream_closed"


class CorruptLog(QuipError):
    code = "corrupt_log"


class IoFailure(QuipError):
    code = "io_failure"
