"""Prompt-building, completion and parse-with-repair behind one call."""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional

from ..errors import ResponseParseError
from ..prompts import Expected, PromptKind, PromptLibrary, build_prompt, parse_structured, repair_message
from ..providers import ChatMessage, CompletionParams, LLMProvider, Role, messages_digest

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 2

DEFAULT_TEMPERATURES: Dict[PromptKind, float] = {PromptKind.SYNTH_CREATE_QUESTION: 0.7}


@dataclass(frozen=True)
class LLMCall:
    """One round trip, as recorded in traces."""

    kind: PromptKind
    attempt: int
    prompt_digest: str
    raw: str


CallListener = Callable[[LLMCall], None]


class LLMGateway:
    """Turns a call site and its context into a parsed model answer."""

    def __init__(
        self,
        provider: LLMProvider,
        library: Optional[PromptLibrary] = None,
        temperatures: Optional[Mapping[PromptKind, float]] = None,
        max_tokens: int = 1024,
        seed: Optional[int] = None,
    ):
        self.provider = provider
        self.library = library or PromptLibrary()
        self.temperatures = dict(DEFAULT_TEMPERATURES)
        self.temperatures.update(temperatures or {})
        self.max_tokens = max_tokens
        self.seed = seed

    def params_for(self, kind: PromptKind) -> CompletionParams:
        return CompletionParams(
            temperature=self.temperatures.get(kind, 0.0),
            max_tokens=self.max_tokens,
            seed=self.seed,
            kind=kind.value,
        )

    def ask(
        self,
        kind: PromptKind,
        context: Mapping[str, Any],
        expected: Expected,
        validate: Optional[Callable[[Any], None]] = None,
        on_call: Optional[CallListener] = None,
    ) -> Any:
        """Parsed answer for one call site.

        A response that does not parse, or that ``validate`` rejects with
        ``ResponseParseError``, is re-asked once with a repair instruction.
        """
        messages: List[ChatMessage] = build_prompt(kind, context, self.library)
        params = self.params_for(kind)
        error: Optional[ResponseParseError] = None
        for attempt in range(1, MAX_ATTEMPTS + 1):
            raw = self.provider.complete(messages, params)
            if on_call is not None:
                on_call(LLMCall(kind, attempt, messages_digest(messages), raw))
            try:
                value = parse_structured(raw, expected)
                if validate is not None:
                    validate(value)
                return value
            except ResponseParseError as e:
                error = ResponseParseError(str(e), raw, step=e.step)
                logger.warning("Unusable %s response (attempt %d): %s", kind.value, attempt, e)
                messages = messages + [ChatMessage(Role.ASSISTANT, raw), repair_message(expected, str(e))]
        assert error is not None
        raise error
