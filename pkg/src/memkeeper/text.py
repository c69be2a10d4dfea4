"""Text normalization and tokenization shared by every module.

No case folding: the source corpus is Korean and case folding would corrupt
mixed-script facts.
"""

from __future__ import annotations

import re
import unicodedata
from typing import List

_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """NFC, trim, collapse internal whitespace runs to one space."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def tokenize(text: str) -> List[str]:
    return normalize(text).split()


def ngrams(tokens: List[str], n: int) -> List[tuple]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
