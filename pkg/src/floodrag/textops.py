"""Small text helpers shared by prompt auditing, downgrade rules, and metrics."""

from __future__ import annotations

import re

# Deliberately crude segmentation: split on the three sentence-final
# delimiters only, so counting is deterministic across platforms.
_SENTENCE_SPLIT = re.compile(r"\. |! |\? ")


def split_sentences(text: str) -> list[str]:
    """Split ``text`` into trimmed sentence fragments."""
    return [part.strip() for part in _SENTENCE_SPLIT.split(text) if part.strip()]


def count_words(text: str) -> int:
    """Whitespace-delimited token count."""
    return len(text.split())


def contains_ci(text: str, phrase: str) -> bool:
    """Case-insensitive substring test."""
    return phrase.lower() in text.lower()


def word_pattern(surface: str) -> re.Pattern[str]:
    """Case-insensitive, word-bounded pattern for a surface form.

    Word boundaries keep short aliases from firing inside longer words
    (for example "age" must not match inside "damage").
    """
    return re.compile(r"\b" + re.escape(surface) + r"\b", re.IGNORECASE)
