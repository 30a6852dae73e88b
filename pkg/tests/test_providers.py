"""Unit tests for LLM backends."""

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace
from unittest.mock import patch

import httpx
import pytest

from kwsql.errors import ConfigError, LLMTransportError, NoMatchingRuleError
from kwsql.providers import ChatMessage, CompletionParams, ProviderFactory, Role, messages_digest
from kwsql.providers.openai import OpenAIProvider
from kwsql.providers.scripted import ScriptedProvider, load_transcript, parse_rule
from tests.support import TRANSCRIPT_PATH

MESSAGES = [ChatMessage(Role.SYSTEM, "You translate questions."), ChatMessage(Role.USER, "Question: Which rigs?")]


def completion_body(content):
    return {
        "id": "chatcmpl-1",
        "object": "chat.completion",
        "created": 0,
        "model": "test-model",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
    }


def http_provider(handler, **config):
    options = {"api_key": "test-key", "endpoint": "http://llm.test/v1", "model": "test-model", "max_retries": 0}
    options.update(config)
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return OpenAIProvider(options, http_client=client)


class TestScriptedProvider:
    """Test cases for the transcript-driven backend."""

    def test_first_matching_rule_wins(self):
        """Test rules are tried in order."""
        provider = ScriptedProvider({"rules": [
            {"match": {"contains": "rigs"}, "response": "first"},
            {"match": {"contains": "Which"}, "response": "second"},
        ]})
        assert provider.complete(MESSAGES, CompletionParams()) == "first"

    def test_every_criterion_must_hold(self):
        """Test kind, contains and hash are combined."""
        provider = ScriptedProvider({"rules": [
            {"match": {"kind": "schema_linking", "contains": "rigs"}, "response": "wrong kind"},
            {"match": {"contains": ["rigs", "platforms"]}, "response": "missing fragment"},
            {"match": {"kind": "keyword_extraction", "contains": ["rigs", "Which"]}, "response": "ok"},
        ]})
        assert provider.complete(MESSAGES, CompletionParams(kind="keyword_extraction")) == "ok"

    def test_hash_match(self):
        """Test a rule can pin the exact message list."""
        provider = ScriptedProvider({"rules": [
            {"match": {"hash": "0" * 64}, "response": "never"},
            {"match": {"hash": messages_digest(MESSAGES)}, "response": "pinned"},
        ]})
        assert provider.complete(MESSAGES, CompletionParams()) == "pinned"

    def test_no_matching_rule(self):
        """Test an unmatched prompt raises NoMatchingRuleError."""
        provider = ScriptedProvider({"rules": [{"match": {"kind": "schema_linking"}, "response": "x"}]})
        with pytest.raises(NoMatchingRuleError, match="keyword_extraction prompt"):
            provider.complete(MESSAGES, CompletionParams(kind="keyword_extraction"))

    def test_needs_rules(self):
        """Test a backend without rules or transcript is a configuration error."""
        with pytest.raises(ConfigError, match="needs a transcript file or rules"):
            ScriptedProvider({})

    def test_fixture_transcript(self):
        """Test the fixture transcript loads four rules per benchmark question."""
        rules = load_transcript(TRANSCRIPT_PATH)
        assert len(rules) == 48
        assert {rule.kind for rule in rules} == {
            "keyword_extraction", "schema_linking", "question_decomposition", "sql_compilation",
        }

    def test_rule_round_trip(self):
        """Test a parsed rule serializes back to its source form."""
        raw = {"match": {"kind": "sql_compilation", "contains": ["a", "b"]}, "response": "SELECT 1"}
        assert parse_rule(raw).to_dict() == raw


class TestTranscriptErrors:
    """Test cases for malformed transcripts."""

    @pytest.mark.parametrize("raw,message", [
        ({"response": "x"}, "needs a 'match' object"),
        ({"match": {"kind": "k"}}, "needs a 'match' object"),
        ({"match": {}, "response": "x"}, "no match criteria"),
        ({"match": {"regex": "x"}, "response": "x"}, "unknown transcript match keys: regex"),
    ])
    def test_bad_rule(self, raw, message):
        """Test each malformed rule shape is rejected."""
        with pytest.raises(ConfigError, match=message):
            parse_rule(raw)

    def test_line_number_reported(self, tmp_path):
        """Test transcript errors name the offending line."""
        path = tmp_path / "transcript.jsonl"
        path.write_text('{"match": {"kind": "k"}, "response": "x"}\n\n{broken\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="line 3: malformed transcript rule"):
            load_transcript(path)

    def test_missing_file(self, tmp_path):
        """Test a missing transcript is a configuration error."""
        with pytest.raises(ConfigError, match="cannot open transcript"):
            load_transcript(tmp_path / "absent.jsonl")


class TestOpenAIProvider:
    """Test cases for the HTTP backend against a mock transport."""

    def test_completion_request(self):
        """Test the request carries messages, temperature and seed."""
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=completion_body('["rigs"]'))

        provider = http_provider(handler)
        answer = provider.complete(MESSAGES, CompletionParams(temperature=0.0, seed=7, kind="keyword_extraction"))
        assert answer == '["rigs"]'
        assert seen["url"] == "http://llm.test/v1/chat/completions"
        assert seen["body"]["seed"] == 7
        assert seen["body"]["temperature"] == 0.0
        assert seen["body"]["messages"][1] == {"role": "user", "content": "Question: Which rigs?"}

    def test_seed_omitted_when_unset(self):
        """Test no seed is sent unless configured."""
        seen = {}

        def handler(request):
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=completion_body("x"))

        http_provider(handler).complete(MESSAGES, CompletionParams())
        assert "seed" not in seen["body"]

    def test_http_status_error(self):
        """Test non-2xx answers keep their status."""
        provider = http_provider(lambda request: httpx.Response(503, json={"error": {"message": "busy"}}))
        with pytest.raises(LLMTransportError) as info:
            provider.complete(MESSAGES, CompletionParams())
        assert info.value.status == 503
        assert info.value.step == "llm"

    def test_transient_status_retried(self):
        """Test a 503 answer is retried and the next success is returned."""
        calls = []

        def handler(request):
            calls.append(request)
            if len(calls) == 1:
                return httpx.Response(503, headers={"retry-after-ms": "1"}, json={"error": {"message": "busy"}})
            return httpx.Response(200, json=completion_body("ok"))

        assert http_provider(handler, max_retries=1).complete(MESSAGES, CompletionParams()) == "ok"
        assert len(calls) == 2

    def test_in_flight_requests_capped(self):
        """Test no more than max_in_flight requests reach the endpoint at once."""
        lock = threading.Lock()
        state = {"active": 0, "peak": 0}

        def handler(request):
            with lock:
                state["active"] += 1
                state["peak"] = max(state["peak"], state["active"])
            time.sleep(0.05)
            with lock:
                state["active"] -= 1
            return httpx.Response(200, json=completion_body("ok"))

        provider = http_provider(handler, max_in_flight=2)
        with ThreadPoolExecutor(max_workers=6) as pool:
            answers = list(pool.map(lambda _: provider.complete(MESSAGES, CompletionParams()), range(6)))
        assert answers == ["ok"] * 6
        assert state["peak"] == 2

    def test_connection_error(self):
        """Test transport failures become LLMTransportError."""
        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        with pytest.raises(LLMTransportError, match="connection failed"):
            http_provider(handler).complete(MESSAGES, CompletionParams())

    def test_timeout(self):
        """Test timeouts are reported as such."""
        def handler(request):
            raise httpx.ReadTimeout("slow", request=request)

        with pytest.raises(LLMTransportError, match="timed out"):
            http_provider(handler).complete(MESSAGES, CompletionParams())

    def test_empty_choices(self):
        """Test a response without choices is a transport error."""
        body = completion_body("x")
        body["choices"] = []
        with pytest.raises(LLMTransportError, match="no choices"):
            http_provider(lambda request: httpx.Response(200, json=body)).complete(MESSAGES, CompletionParams())

    def test_missing_api_key(self):
        """Test the backend refuses to start without a key."""
        with pytest.raises(ConfigError, match="LLM_API_KEY"):
            OpenAIProvider({"endpoint": "http://llm.test/v1"})


class TestProviderFactory:
    """Test cases for ProviderFactory class."""

    def setup_method(self):
        """Set up test fixtures."""
        self.factory = ProviderFactory()

    def app_config(self, **changes):
        """Stand-in for AppConfig carrying only the backend settings."""
        options = dict(scripted_path=None, http_endpoint=None, http_model="m", max_retries=0,
                       timeout=5.0, max_in_flight=2)
        options.update(changes)
        return SimpleNamespace(**options)

    def test_scripted_from_config(self):
        """Test a transcript path selects the scripted backend."""
        provider = self.factory.from_app_config(self.app_config(scripted_path=str(TRANSCRIPT_PATH)))
        assert isinstance(provider, ScriptedProvider)
        assert len(provider.rules) == 48

    @patch.dict('os.environ', {'LLM_API_KEY': 'env-key'})
    def test_http_key_from_environment(self):
        """Test the HTTP backend takes its key from LLM_API_KEY."""
        provider = self.factory.from_app_config(self.app_config(http_endpoint="http://llm.test/v1"))
        assert isinstance(provider, OpenAIProvider)
        assert provider.config["api_key"] == "env-key"
        assert provider.model == "m"

    @patch.dict('os.environ', {}, clear=True)
    def test_http_without_key(self):
        """Test a missing key is reported as a configuration error."""
        with pytest.raises(ConfigError, match="LLM API key not found"):
            self.factory.from_app_config(self.app_config(http_endpoint="http://llm.test/v1"))

    def test_both_backends(self):
        """Test configuring two backends is rejected."""
        with pytest.raises(ConfigError, match="choose one"):
            self.factory.from_app_config(self.app_config(scripted_path="t.jsonl", http_endpoint="http://x"))

    def test_no_backend(self):
        """Test configuring no backend is rejected."""
        with pytest.raises(ConfigError, match="no LLM backend configured"):
            self.factory.from_app_config(self.app_config())

    def test_unknown_provider(self):
        """Test creating unknown provider."""
        with pytest.raises(ValueError, match="Unknown provider: ollama"):
            self.factory.create_provider("ollama", {})
