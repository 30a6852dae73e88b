"""kwsql - text-to-SQL over synthesized views, keyword search and dynamic few-shot examples."""

from .version import get_version

__version__ = get_version()
__license__ = "Apache-2.0"
