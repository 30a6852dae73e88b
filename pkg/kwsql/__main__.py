#!/usr/bin/env python3
"""Module entry point: ``python -m kwsql``."""

import sys


def main() -> int:
    from kwsql.main import main as kwsql_main
    return kwsql_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
