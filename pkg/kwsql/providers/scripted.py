"""Deterministic backend answering prompts from an ordered rule transcript."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from ..errors import ConfigError, NoMatchingRuleError
from ..providers import ChatMessage, CompletionParams, LLMProvider, messages_digest

logger = logging.getLogger(__name__)

MATCH_KEYS = ("kind", "contains", "hash")


@dataclass(frozen=True)
class TranscriptRule:
    """A response guarded by match criteria; every given criterion must hold."""

    response: str
    kind: Optional[str] = None
    contains: Tuple[str, ...] = ()
    hash: Optional[str] = None

    def matches(self, text: str, kind: Optional[str], digest: str) -> bool:
        if self.kind is not None and self.kind != kind:
            return False
        if self.hash is not None and self.hash != digest:
            return False
        return all(fragment in text for fragment in self.contains)

    def to_dict(self) -> Dict[str, Any]:
        match: Dict[str, Any] = {}
        if self.kind is not None:
            match["kind"] = self.kind
        if self.contains:
            match["contains"] = self.contains[0] if len(self.contains) == 1 else list(self.contains)
        if self.hash is not None:
            match["hash"] = self.hash
        return {"match": match, "response": self.response}


def parse_rule(raw: Any) -> TranscriptRule:
    """Validate one transcript object into a rule."""
    if not isinstance(raw, dict) or not isinstance(raw.get("match"), dict) or "response" not in raw:
        raise ConfigError("transcript rule needs a 'match' object and a 'response'")
    match = raw["match"]
    unknown = sorted(set(match) - set(MATCH_KEYS))
    if unknown:
        raise ConfigError(f"unknown transcript match keys: {', '.join(unknown)}")
    if not match:
        raise ConfigError("transcript rule has no match criteria")
    contains = match.get("contains", ())
    if isinstance(contains, str):
        contains = (contains,)
    return TranscriptRule(
        response=str(raw["response"]),
        kind=match.get("kind"),
        contains=tuple(str(c) for c in contains),
        hash=match.get("hash"),
    )


def load_transcript(path: Union[str, Path]) -> List[TranscriptRule]:
    """Rules of a JSONL transcript, in file order."""
    rules = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot open transcript {path}: {e}") from e
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                rules.append(parse_rule(json.loads(line)))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: line {number}: malformed transcript rule: {e}") from e
            except ConfigError as e:
                raise ConfigError(f"{path}: line {number}: {e}") from e
    return rules


class ScriptedProvider(LLMProvider):
    """Read-only over its rules; the first matching rule answers."""

    def __init__(self, config: Dict[str, Any]):
        super().__init__(config)
        rules: Iterable[Any] = config.get("rules") or []
        self.rules: List[TranscriptRule] = [
            rule if isinstance(rule, TranscriptRule) else parse_rule(rule) for rule in rules
        ]
        if config.get("transcript"):
            self.rules.extend(load_transcript(config["transcript"]))
        logger.debug("Scripted backend with %d rules", len(self.rules))

    def _validate_credentials(self) -> None:
        if not self.config.get("rules") and not self.config.get("transcript"):
            raise ConfigError("scripted backend needs a transcript file or rules")

    def complete(self, messages: List[ChatMessage], params: CompletionParams) -> str:
        text = "\n".join(message.content for message in messages)
        digest = messages_digest(messages)
        for position, rule in enumerate(self.rules):
            if rule.matches(text, params.kind, digest):
                logger.debug("Rule %d answers %s prompt", position, params.kind)
                return rule.response
        raise NoMatchingRuleError(
            f"no transcript rule matches {params.kind or 'unlabelled'} prompt {digest[:12]}"
        )
