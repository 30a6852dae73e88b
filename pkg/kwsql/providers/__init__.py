"""Base classes and interfaces for kwsql chat-completion backends."""

import hashlib
import json
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

from ..errors import ConfigError


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        if self.role is not Role.ASSISTANT and not self.content.strip():
            raise ValueError(f"{self.role.value} message content is empty")

    def to_dict(self) -> Dict[str, str]:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class CompletionParams:
    """Sampling settings for one call; ``kind`` names the call site for scripted matching."""

    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None
    kind: Optional[str] = None


def messages_digest(messages: Sequence[ChatMessage]) -> str:
    """sha256 of the canonical JSON form of a message list."""
    payload = json.dumps([m.to_dict() for m in messages], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LLMProvider(ABC):
    """Abstract base class for chat-completion backends."""

    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self._validate_credentials()

    @abstractmethod
    def _validate_credentials(self) -> None:
        """Validate that the backend has everything it needs to answer."""
        pass

    @abstractmethod
    def complete(self, messages: List[ChatMessage], params: CompletionParams) -> str:
        """Return the text of one completion for ``messages``."""
        pass

    def close(self) -> None:
        pass


class ProviderFactory:
    """Factory for creating backend instances from configuration."""

    PROVIDERS = ("scripted", "http")

    def create_provider(self, provider_name: str, config: Dict[str, Any]) -> LLMProvider:
        """Backend named ``provider_name``; LLM_API_KEY, when set, supplies the HTTP key."""
        if provider_name == "scripted":
            from .scripted import ScriptedProvider
            return ScriptedProvider(config)
        elif provider_name == "http":
            from .openai import OpenAIProvider
            provider_config = dict(config)
            env_key = os.getenv("LLM_API_KEY")
            if env_key:
                provider_config["api_key"] = env_key
            return OpenAIProvider(provider_config)
        else:
            raise ValueError(f"Unknown provider: {provider_name}")

    def from_app_config(self, app_config: Any) -> LLMProvider:
        """Backend selected by an ``AppConfig``; exactly one must be configured."""
        if app_config.scripted_path and app_config.http_endpoint:
            raise ConfigError("both scripted_path and http_endpoint are set; choose one LLM backend")
        if app_config.scripted_path:
            return self.create_provider("scripted", {"transcript": app_config.scripted_path})
        if app_config.http_endpoint:
            return self.create_provider("http", {
                "endpoint": app_config.http_endpoint,
                "model": app_config.http_model,
                "max_retries": app_config.max_retries,
                "timeout": app_config.timeout,
                "max_in_flight": app_config.max_in_flight,
            })
        raise ConfigError("no LLM backend configured; set scripted_path or http_endpoint")
