"""Memory data model and the pairwise memory update.

A memory is an ordered list of short, unstructured sentences about the user.
At the end of each session the summarizer produces new sentences, and every
(memory, summary) pair is labelled with one of four operations:

    PASS     keep the memory sentence only
    REPLACE  keep the summary sentence only
    APPEND   keep both
    DELETE   keep neither

``update_memory`` merges the two lists in two phases. Memory sentences hit by
REPLACE or DELETE are dropped first. Summary sentences are then dropped if any
pair deleted them or any *surviving* memory sentence PASSes over them.
"""

from __future__ import annotations

import threading
import warnings
import weakref
from contextlib import nullcontext
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .errors import ClassifierFailure, DuplicateTextConflict, EmptyText, MissingPair, SchemaViolation
from .text import normalize

if TYPE_CHECKING:
    from .classify import OperationClassifier


class Origin(str, Enum):
    FROM_MEMORY = "FROM_MEMORY"
    FROM_SUMMARY = "FROM_SUMMARY"


class MemOp(str, Enum):
    PASS = "PASS"
    REPLACE = "REPLACE"
    APPEND = "APPEND"
    DELETE = "DELETE"

    @property
    def token(self) -> str:
        """Single-character label used by the text-to-text classifier."""
        return _OP_TO_TOKEN[self]

    @classmethod
    def from_token(cls, token: str) -> "MemOp":
        try:
            return _TOKEN_TO_OP[token]
        except KeyError:
            raise ValueError(f"not a memory-operation token: {token!r}") from None


_OP_TO_TOKEN = {MemOp.PASS: "0", MemOp.APPEND: "1", MemOp.REPLACE: "2", MemOp.DELETE: "3"}
_TOKEN_TO_OP = {v: k for k, v in _OP_TO_TOKEN.items()}


def apply_operation(op: MemOp) -> Tuple[bool, bool]:
    """Return (keep_memory, keep_summary) for a single pair."""
    op = MemOp(op)
    return (op in (MemOp.PASS, MemOp.APPEND), op in (MemOp.REPLACE, MemOp.APPEND))


@dataclass(frozen=True)
class MemorySentence:
    id: str
    text: str
    origin_session: int = 1
    origin: Origin = Origin.FROM_SUMMARY

    def __post_init__(self) -> None:
        text = normalize(self.text) if isinstance(self.text, str) else ""
        if not text:
            raise EmptyText(f"memory sentence {self.id!r} has empty text")
        if not isinstance(self.origin_session, int) or self.origin_session < 1:
            raise SchemaViolation(f"origin_session must be an int >= 1, got {self.origin_session!r}",
                                  field="origin_session")
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "origin", Origin(self.origin))

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "text": self.text,
                "origin_session": self.origin_session, "origin": self.origin.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MemorySentence":
        try:
            return cls(id=str(data["id"]), text=data["text"],
                       origin_session=int(data.get("origin_session", 1)),
                       origin=data.get("origin", Origin.FROM_SUMMARY.value))
        except KeyError as exc:
            raise SchemaViolation("missing key", field=exc.args[0]) from None
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from None


def _check_unique(sentences: Sequence[MemorySentence], what: str) -> None:
    ids = set()
    texts = set()
    for s in sentences:
        if not isinstance(s, MemorySentence):
            raise TypeError(f"{what} must hold MemorySentence objects, got {type(s).__name__}")
        if s.id in ids:
            raise SchemaViolation(f"duplicate id {s.id!r} in {what}", field="id")
        if s.text in texts:
            raise SchemaViolation(f"duplicate text {s.text!r} in {what}", field="text")
        ids.add(s.id)
        texts.add(s.text)


class _SentenceList:
    sentences: Tuple[MemorySentence, ...]

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[MemorySentence]:
        return iter(self.sentences)

    @property
    def texts(self) -> List[str]:
        return [s.text for s in self.sentences]

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.sentences]

    def to_json(self) -> List[Dict[str, Any]]:
        return [s.to_dict() for s in self.sentences]


@dataclass(frozen=True)
class MemoryState(_SentenceList):
    """The bot's knowledge about the user, as served to ``session_index``."""

    sentences: Tuple[MemorySentence, ...] = ()
    session_index: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        _check_unique(self.sentences, "memory")

    @classmethod
    def from_json(cls, data: Iterable[Mapping[str, Any]], session_index: int = 1) -> "MemoryState":
        return cls(tuple(MemorySentence.from_dict(d) for d in data), session_index)

    @classmethod
    def from_texts(cls, texts: Iterable[str], session_index: int = 1, prefix: str = "m",
                   origin: Origin = Origin.FROM_MEMORY) -> "MemoryState":
        return cls(tuple(MemorySentence(f"{prefix}{i}", t, max(session_index - 1, 1), origin)
                         for i, t in enumerate(texts, 1)), session_index)


@dataclass(frozen=True)
class SummaryBatch(_SentenceList):
    """End-of-session summary sentences waiting to be merged into memory."""

    sentences: Tuple[MemorySentence, ...] = ()
    source_session: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        _check_unique(self.sentences, "summary")
        for s in self.sentences:
            if s.origin is not Origin.FROM_SUMMARY:
                raise SchemaViolation(f"summary sentence {s.id!r} must have origin FROM_SUMMARY",
                                      field="origin")

    @classmethod
    def from_json(cls, data: Iterable[Mapping[str, Any]], source_session: int = 1) -> "SummaryBatch":
        return cls(tuple(MemorySentence.from_dict(d) for d in data), source_session)

    @classmethod
    def from_texts(cls, texts: Iterable[str], source_session: int = 1,
                   prefix: Optional[str] = None) -> "SummaryBatch":
        """Fresh ids ``s<session>.<j>``; identity never depends on text."""
        prefix = f"s{source_session}." if prefix is None else prefix
        return cls(tuple(MemorySentence(f"{prefix}{j}", t, source_session, Origin.FROM_SUMMARY)
                         for j, t in enumerate(texts, 1)), source_session)


OpTable = Dict[Tuple[str, str], MemOp]


@dataclass(frozen=True)
class MemoryUpdateResult:
    new_memory: MemoryState
    removed_memory: Tuple[MemorySentence, ...]
    removed_summary: Tuple[MemorySentence, ...]
    op_table: OpTable
    # summary copies dropped because they duplicated a kept memory sentence
    dropped_duplicates: Tuple[MemorySentence, ...] = ()
    # sentences pushed out by the optional capacity limit
    evicted: Tuple[MemorySentence, ...] = ()
    classifier_calls: int = 0

    def deciding_pair(self, sentence_id: str) -> Optional[Tuple[str, str, MemOp]]:
        """First pair that removed ``sentence_id``, for human-readable diffs."""
        for (m_id, s_id), op in self.op_table.items():
            if m_id == sentence_id and op in (MemOp.REPLACE, MemOp.DELETE):
                return m_id, s_id, op
        for (m_id, s_id), op in self.op_table.items():
            if s_id == sentence_id and op is MemOp.DELETE:
                return m_id, s_id, op
        kept = set(self.new_memory.ids)
        for (m_id, s_id), op in self.op_table.items():
            if s_id == sentence_id and op is MemOp.PASS and m_id in kept:
                return m_id, s_id, op
        return None

    def to_json(self) -> Dict[str, Any]:
        return {
            "new_memory": self.new_memory.to_json(),
            "removed_memory": [s.to_dict() for s in self.removed_memory],
            "removed_summary": [s.to_dict() for s in self.removed_summary],
            "op_table": [{"m_id": m, "s_id": s, "op": op.value} for (m, s), op in self.op_table.items()],
            "dropped_duplicates": [s.to_dict() for s in self.dropped_duplicates],
            "evicted": [s.to_dict() for s in self.evicted],
        }


_locks: "weakref.WeakKeyDictionary[Any, threading.Lock]" = weakref.WeakKeyDictionary()
_locks_guard = threading.Lock()


def _classifier_guard(classifier: Any):
    """Serialize calls to classifiers that declare themselves single-use."""
    if getattr(classifier, "concurrent_safe", True):
        return nullcontext()
    with _locks_guard:
        lock = _locks.get(classifier)
        if lock is None:
            lock = _locks[classifier] = threading.Lock()
    return lock


def _classify_pair(classifier: "OperationClassifier", m: MemorySentence, s: MemorySentence) -> MemOp:
    try:
        op = classifier.classify(m.text, s.text)
    except ClassifierFailure as exc:
        if exc.pair is None:
            exc.pair = (m.text, s.text)
        raise
    try:
        return MemOp(op)
    except ValueError:
        raise ClassifierFailure(f"classifier returned unknown label {op!r}", pair=(m.text, s.text)) from None


def evict_oldest(sentences: Sequence[MemorySentence], max_size: int) -> Tuple[List[MemorySentence], List[MemorySentence]]:
    """Drop the oldest ``origin_session`` entries until at most ``max_size`` remain."""
    if max_size < 0:
        raise ValueError("max_size must be >= 0")
    excess = len(sentences) - max_size
    if excess <= 0:
        return list(sentences), []
    order = sorted(range(len(sentences)), key=lambda i: (sentences[i].origin_session, i))
    gone = set(order[:excess])
    kept = [s for i, s in enumerate(sentences) if i not in gone]
    evicted = [s for i, s in enumerate(sentences) if i in gone]
    return kept, evicted


def update_memory(
    memory: MemoryState,
    summary: SummaryBatch,
    classifier: "OperationClassifier",
    max_size: Optional[int] = None,
) -> MemoryUpdateResult:
    """Merge ``summary`` into ``memory`` and return the new memory.

    Every pair is classified once, in memory-major order, and the cached labels
    are reused by the second phase. Pairs whose texts are identical are forced
    to PASS without consulting the classifier, so the older sentence wins.
    """
    ms, ss = memory.sentences, summary.sentences
    overlap = set(memory.ids) & set(summary.ids)
    if overlap:
        raise SchemaViolation(f"memory and summary share ids: {sorted(overlap)}", field="id")

    ops: OpTable = {}
    cache: Dict[Tuple[str, str], MemOp] = {}
    calls = 0
    if ms and ss:
        with _classifier_guard(classifier):
            for m in ms:
                for s in ss:
                    key = (m.text, s.text)
                    op = cache.get(key)
                    if op is None:
                        if m.text == s.text:
                            op = MemOp.PASS
                        else:
                            op = _classify_pair(classifier, m, s)
                            calls += 1
                        cache[key] = op
                    ops[(m.id, s.id)] = op

    m_del: set = set()
    s_del: set = set()
    for m in ms:
        for s in ss:
            op = ops[(m.id, s.id)]
            if op is MemOp.REPLACE or op is MemOp.DELETE:
                m_del.add(m.id)
                if op is MemOp.DELETE:
                    s_del.add(s.id)
    kept_m = [m for m in ms if m.id not in m_del]

    for s in ss:
        for m in kept_m:
            if ops[(m.id, s.id)] is MemOp.PASS:
                s_del.add(s.id)
                break
    kept_s = [s for s in ss if s.id not in s_del]

    seen = {m.text for m in kept_m}
    dropped = []
    merged = list(kept_m)
    for s in kept_s:
        if s.text in seen:
            warnings.warn(f"summary sentence {s.id!r} duplicates kept memory text {s.text!r}; dropped",
                          DuplicateTextConflict, stacklevel=2)
            dropped.append(s)
            continue
        seen.add(s.text)
        merged.append(s)

    evicted: List[MemorySentence] = []
    if max_size is not None:
        merged, evicted = evict_oldest(merged, max_size)

    return MemoryUpdateResult(
        new_memory=MemoryState(tuple(merged), summary.source_session + 1),
        removed_memory=tuple(m for m in ms if m.id in m_del),
        removed_summary=tuple(s for s in ss if s.id in s_del) + tuple(dropped),
        op_table=ops,
        dropped_duplicates=tuple(dropped),
        evicted=tuple(evicted),
        classifier_calls=calls,
    )


def update_memory_oracle(
    memory: MemoryState,
    summary: SummaryBatch,
    op_table: Mapping[Tuple[str, str], Any],
) -> MemoryState:
    """Reference merge computed straight from a complete op table.

    Used for differential testing; keep it free of any code shared with
    ``update_memory``.
    """
    table = {}
    for m in memory:
        for s in summary:
            if (m.id, s.id) not in op_table:
                raise MissingPair(m.id, s.id)
            table[m.id, s.id] = MemOp(op_table[m.id, s.id])

    survivors_m = [
        m for m in memory
        if not any(table[m.id, s.id] in {MemOp.REPLACE, MemOp.DELETE} for s in summary)
    ]
    survivors_s = [
        s for s in summary
        if all(table[m.id, s.id] != MemOp.DELETE for m in memory)
        and not any(table[m.id, s.id] == MemOp.PASS for m in survivors_m)
    ]
    return MemoryState(tuple(survivors_m + survivors_s), summary.source_session + 1)


@dataclass(frozen=True)
class AuditViolation:
    first: MemorySentence
    second: MemorySentence
    op: MemOp

    def to_dict(self) -> Dict[str, Any]:
        return {"first": self.first.id, "second": self.second.id, "op": self.op.value}


def audit_memory(memory: MemoryState, classifier: "OperationClassifier") -> List[AuditViolation]:
    """Flag ordered intra-memory pairs that do not classify as APPEND.

    Advisory only: a clean memory should be pairwise independent, but nothing
    here modifies it.
    """
    out = []
    with _classifier_guard(classifier):
        for a in memory:
            for b in memory:
                if a.id == b.id:
                    continue
                op = _classify_pair(classifier, a, b)
                if op is not MemOp.APPEND:
                    out.append(AuditViolation(a, b, op))
    return out
