from __future__ import annotations

import json
import os
from typing import Any, Iterable, Iterator, Tuple

from .errors import InputError, ParseError


def read_jsonl(path: str) -> Iterator[Tuple[int, Any]]:
    """Yield (line number, parsed object) for every non-blank line."""
    if not os.path.exists(path):
        raise InputError(f"no such file: {path}")
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, line=lineno) from None


def write_jsonl(path: str, records: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False, sort_keys=False))
            f.write("\n")
