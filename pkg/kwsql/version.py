import os

path = os.path.abspath(os.path.dirname(__file__))


def get_version(filename: str = os.path.join(path, "version")) -> str:
    with open(filename, "r", encoding="utf-8") as f:
        return f.read().strip()
