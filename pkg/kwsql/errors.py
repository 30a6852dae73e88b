"""Exception hierarchy shared by every kwsql stage."""

from typing import Any, Optional


class KwsqlError(Exception):
    """Base error; ``step`` names the stage reported on the CLI error line."""

    step = "runtime"

    def __init__(self, message: str, step: Optional[str] = None):
        super().__init__(message)
        if step is not None:
            self.step = step


class SchemaError(KwsqlError, ValueError):
    """Malformed schema document or a reference to an unknown table or column."""

    step = "schema"


class SQLAnalysisError(KwsqlError, ValueError):
    step = "sql"


class SteinerError(KwsqlError, ValueError):
    """No join tree spans the requested tables."""

    step = "view"


class ViewError(KwsqlError, ValueError):
    step = "view"


class DictionaryError(KwsqlError, ValueError):
    step = "index"


class ExampleStoreError(KwsqlError, ValueError):
    step = "examples"


class PromptError(KwsqlError, ValueError):
    step = "prompt"


class LLMError(KwsqlError):
    """Base for failures talking to, or reading answers from, a language model."""

    step = "llm"


class NoMatchingRuleError(LLMError):
    """Scripted backend found no transcript rule for a prompt."""


class LLMTransportError(LLMError):
    """HTTP backend failure; ``status`` is the raw HTTP status when one exists."""

    def __init__(self, message: str, status: Optional[int] = None, step: Optional[str] = None):
        super().__init__(message, step)
        self.status = status


class ResponseParseError(LLMError, ValueError):
    """No usable payload in a model response; ``raw`` keeps the response for the trace."""

    def __init__(self, message: str, raw: str = "", step: Optional[str] = None):
        super().__init__(message, step)
        self.raw = raw


class ExecutionBackendError(KwsqlError):
    """The database could not be opened, seeded or reached."""

    step = "execute"


class QueryError(ExecutionBackendError):
    """The engine rejected a statement; ``sql`` is the statement that failed."""

    def __init__(self, message: str, sql: str = "", step: Optional[str] = None):
        super().__init__(message, step)
        self.sql = sql


class GenerationError(KwsqlError):
    """A synthetic example attempt could not be completed."""

    step = "generate"


class ConfigError(KwsqlError, ValueError):
    """Invalid or missing configuration; the CLI exits with code 2."""

    step = "config"


class PipelineError(KwsqlError):
    """A pipeline stage failed; ``trace`` holds the records written before the failure."""

    def __init__(self, message: str, step: str, trace: Any = None, cause: Optional[BaseException] = None):
        super().__init__(message, step)
        self.trace = trace
        self.cause = cause


class BenchmarkError(KwsqlError, ValueError):
    step = "eval"
