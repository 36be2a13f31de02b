"""Prompt construction and suggestion generation.

Builds mode-specific instructions with the fixed priority order (typed
prefix, then selected context, then keywords, then associations), enforces
per-mode suggestion cardinality, and implements the client-side refresh
exclusion with bounded retries.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import InvalidConfig, NoNewSuggestions
from .providers import LlmProvider
from .transcript import MODES, ModeConfig, SessionState

MAX_DEDUPE_RETRIES = 3

_SECTION_RE = re.compile(r"^\[(?P<mode>[a-z_]+)\]\s*$")


def load_templates(path: str | None = None) -> dict[str, str]:
    """Parse the template file: ``[mode]`` headers followed by the raw
    instruction body, blank-line separated."""
    if path is None:
        text = resources.files("quip_engine.data").joinpath("prompt_templates.txt").read_text(
            "utf-8"
        )
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    templates: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        if line.lstrip().startswith("#") and current is None:
            continue
        match = _SECTION_RE.match(line.strip())
        if match:
            current = match.group("mode")
            templates[current] = []
            continue
        if current is not None:
            templates[current].append(line)
    parsed = {mode: "\n".join(lines).strip() for mode, lines in templates.items()}
    missing = set(MODES) - set(parsed)
    if missing:
        raise InvalidConfig(f"template file is missing modes: {sorted(missing)}")
    return parsed


def render_template(template: str, values: dict[str, str]) -> str:
    # Plain replacement, not str.format: context text may contain braces.
    rendered = template
    for key, value in values.items():
        rendered = rendered.replace("{" + key + "}", value)
    return rendered


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    typed_prefix: str
    selected_context: tuple[str, ...]
    selected_keywords: tuple[str, ...]
    selected_associations: tuple[str, ...]
    requested_count: int
    instruction_template_id: str

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "typed_prefix": self.typed_prefix,
            "selected_context": list(self.selected_context),
            "selected_keywords": list(self.selected_keywords),
            "selected_associations": list(self.selected_associations),
            "requested_count": self.requested_count,
            "instruction_template_id": self.instruction_template_id,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def constraints(self) -> dict:
        return {
            "task": "suggestions",
            "prefix": self.typed_prefix,
            "context": list(self.selected_context),
            "keywords": list(self.selected_keywords),
            "associations": list(self.selected_associations),
            "count": self.requested_count,
        }


@dataclass(frozen=True)
class Suggestion:
    id: str
    text: str
    epoch: int
    mode: str
    inputs_digest: str
    shown_at: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "epoch": self.epoch,
            "mode": self.mode,
            "inputs_digest": self.inputs_digest,
            "shown_at": self.shown_at,
        }


def build_prompt(
    state: SessionState,
    context_texts: list[str],
    config: ModeConfig,
    templates: dict[str, str],
) -> tuple[PromptSpec, str]:
    """Build the mode-specific prompt for the current state.

    ``context_texts`` is the resolved context source: the selected bubble
    texts in bubble mode (window sentences when none are selected), the
    window sentences otherwise.
    """
    mode = state.mode
    spec = PromptSpec(
        mode=mode,
        typed_prefix=state.typed_prefix,
        selected_context=tuple(context_texts),
        selected_keywords=tuple(state.selected_keywords),
        selected_associations=tuple(state.selected_associations),
        requested_count=config.suggestion_count[mode],
        instruction_template_id=f"{mode}.v1",
    )
    rendered = render_template(
        templates[mode],
        {
            "prefix": spec.typed_prefix,
            "context": " | ".join(spec.selected_context),
            "keywords": ", ".join(spec.selected_keywords),
            "associations": ", ".join(spec.selected_associations),
            "count": str(spec.requested_count),
        },
    )
    return spec, rendered


def generate_texts(
    llm: LlmProvider,
    instruction: str,
    constraints: dict,
    needed: int,
    exclusions: frozenset[str] | set[str],
    max_retries: int = MAX_DEDUPE_RETRIES,
) -> list[str]:
    """Collect ``needed`` texts not present in ``exclusions``.

    Asks the provider for extras proportional to the exclusion set and
    retries up to ``max_retries`` times when it keeps returning already
    shown texts.
    """
    fresh: list[str] = []
    attempt = 0
    while True:
        ask = needed + len(exclusions) + attempt * needed
        for text in llm.complete(instruction, ask, constraints):
            if text and text not in exclusions and text not in fresh:
                fresh.append(text)
                if len(fresh) == needed:
                    return fresh
        attempt += 1
        if attempt > max_retries:
            raise NoNewSuggestions(
                f"provider returned no unseen texts after {max_retries} retries"
            )
