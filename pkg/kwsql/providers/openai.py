"""OpenAI-compatible chat-completion backend."""

import logging
import threading
from typing import Any, Dict, List, Optional

from ..errors import ConfigError, LLMTransportError
from ..providers import ChatMessage, CompletionParams, LLMProvider

try:
    import openai
except ImportError:
    openai = None  # type: ignore

logger = logging.getLogger(__name__)


class OpenAIProvider(LLMProvider):
    """Posts chat-completion requests to a configured endpoint.

    Transient failures are retried by the client with exponential backoff
    (``max_retries``); a bounded semaphore caps concurrent requests.
    """

    def __init__(self, config: Dict[str, Any], http_client: Optional[Any] = None):
        super().__init__(config)
        if openai is None:
            raise ImportError("openai package is required for the HTTP backend. Install with: pip install openai")

        self.model = self.config.get("model") or "gpt-4"
        self.client = openai.OpenAI(
            api_key=self.config["api_key"],
            base_url=self.config["endpoint"],
            max_retries=int(self.config.get("max_retries", 2)),
            timeout=float(self.config.get("timeout", 60.0)),
            http_client=http_client,
        )
        self._slots = threading.BoundedSemaphore(int(self.config.get("max_in_flight", 4)))

    def _validate_credentials(self) -> None:
        if not self.config.get("api_key"):
            raise ConfigError("LLM API key not found. Set the LLM_API_KEY environment variable")
        if not self.config.get("endpoint"):
            raise ConfigError("HTTP backend needs an endpoint URL")

    def complete(self, messages: List[ChatMessage], params: CompletionParams) -> str:
        """One chat completion, holding an in-flight slot for the duration of the request."""
        request: Dict[str, Any] = {
            "model": self.model,
            "messages": [message.to_dict() for message in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            request["seed"] = params.seed

        with self._slots:
            try:
                response = self.client.chat.completions.create(**request)
            except openai.APITimeoutError as e:
                raise LLMTransportError(f"request timed out: {e}") from e
            except openai.APIStatusError as e:
                raise LLMTransportError(f"HTTP {e.status_code}: {e.message}", status=e.status_code) from e
            except openai.APIConnectionError as e:
                raise LLMTransportError(f"connection failed: {e}") from e

        if not response.choices or response.choices[0].message.content is None:
            raise LLMTransportError("response carries no choices")
        logger.debug("Completion for %s prompt: %d chars", params.kind, len(response.choices[0].message.content))
        return response.choices[0].message.content

    def close(self) -> None:
        self.client.close()


def create_embedder(endpoint: str, model: str, api_key: Optional[str], http_client: Optional[Any] = None) -> Any:
    """Embedding function backed by the endpoint's embeddings API."""
    from ..examples import EndpointEmbedder

    if openai is None:
        raise ImportError("openai package is required for endpoint embeddings. Install with: pip install openai")
    if not api_key:
        raise ConfigError("LLM API key not found. Set the LLM_API_KEY environment variable")
    client = openai.OpenAI(api_key=api_key, base_url=endpoint, http_client=http_client)
    return EndpointEmbedder(client, model)
