"""Question splitting for keyword search without an LLM."""

from typing import List, Tuple

# Trailing punctuation removed from unquoted words; hyphens and dots inside words are kept.
_TRIM = "?!,;:.()[]{}"


class KeywordSplitter:
    """Split a question on whitespace, grouping quoted phrases into single keywords."""

    QUOTE_CHARS = ('"', "'")

    def split(self, text: str) -> List[str]:
        """Keywords in question order, case-insensitively deduplicated."""
        words = text.split()
        keywords: List[str] = []
        i = 0
        while i < len(words):
            word = words[i]
            if word[0] in self.QUOTE_CHARS and self._has_closing_quote(words[i:], word[0]):
                phrase, consumed = self._parse_quoted_string(words[i:])
                if phrase.strip():
                    keywords.append(phrase.strip())
                i += consumed
                continue
            trimmed = word.strip(_TRIM + "\"'")
            if trimmed:
                keywords.append(trimmed)
            i += 1
        return self._dedupe(keywords)

    def _has_closing_quote(self, words: List[str], quote_char: str) -> bool:
        first = words[0][1:]
        if self._find_unescaped_quote_pos(first, quote_char) != -1:
            return True
        return any(self._find_unescaped_quote_pos(w, quote_char) != -1 for w in words[1:])

    def _parse_quoted_string(self, words: List[str]) -> Tuple[str, int]:
        """Parse a quoted phrase that may span several words."""
        quote_char = words[0][0]
        parts = []
        consumed = 0

        for i, word in enumerate(words):
            consumed += 1
            current = word[1:] if i == 0 else word
            end_pos = self._find_unescaped_quote_pos(current, quote_char)
            if end_pos != -1:
                parts.append(current[:end_pos])
                break
            parts.append(current)

        return self._unescape_string(" ".join(parts)), consumed

    def _find_unescaped_quote_pos(self, text: str, quote_char: str) -> int:
        """Position of the first quote not preceded by an odd number of backslashes."""
        for i, char in enumerate(text):
            if char != quote_char:
                continue
            escapes = 0
            j = i - 1
            while j >= 0 and text[j] == "\\":
                escapes += 1
                j -= 1
            if escapes % 2 == 0:
                return i
        return -1

    def _unescape_string(self, text: str) -> str:
        result = []
        i = 0
        while i < len(text):
            if text[i] == "\\" and i + 1 < len(text) and text[i + 1] in ('"', "'", "\\"):
                result.append(text[i + 1])
                i += 2
            else:
                result.append(text[i])
                i += 1
        return "".join(result)

    @staticmethod
    def _dedupe(keywords: List[str]) -> List[str]:
        seen = set()
        kept = []
        for keyword in keywords:
            key = keyword.casefold()
            if key not in seen:
                seen.add(key)
                kept.append(keyword)
        return kept


def split_keywords(text: str) -> List[str]:
    return KeywordSplitter().split(text)
