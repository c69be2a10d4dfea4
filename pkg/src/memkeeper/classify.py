"""Operation classifiers: decide O(m, s) for one (memory, summary) pair.

Every backend exposes ``classify(m_text, s_text) -> MemOp`` and a
``concurrent_safe`` flag. Backends raise ``ClassifierFailure`` and never return
a label outside the four operations.
"""

from __future__ import annotations

import functools
import hashlib
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Protocol, Sequence, Tuple

import requests

from .errors import (
    ClassifierFailure,
    ClassifierTimeout,
    DuplicateKey,
    EmptyText,
    MalformedResponse,
    TransportError,
    UnknownLabel,
)
from .memory import MemOp
from .text import normalize

logger = logging.getLogger(__name__)

PAIR_LABELS = ("PASS", "REPLACE", "APPEND", "DELETE", "FUSION")
FUSION = "FUSION"


class OperationClassifier(Protocol):
    concurrent_safe: bool

    def classify(self, m_text: str, s_text: str) -> MemOp: ...


@dataclass(frozen=True)
class LabeledPair:
    m_text: str
    s_text: str
    gold: str

    def __post_init__(self) -> None:
        gold = str(self.gold).upper()
        if gold not in PAIR_LABELS:
            raise UnknownLabel(f"unknown pair label {self.gold!r}")
        object.__setattr__(self, "gold", gold)

    @property
    def is_fusion(self) -> bool:
        return self.gold == FUSION

    @property
    def op(self) -> MemOp:
        if self.is_fusion:
            raise ValueError("FUSION is an annotation label, not an operation")
        return MemOp(self.gold)


class ConstantClassifier:
    """Returns the same label for every pair. ``APPEND`` gives plain accumulation."""

    concurrent_safe = True

    def __init__(self, op: MemOp = MemOp.APPEND):
        self.op = MemOp(op)

    def classify(self, m_text: str, s_text: str) -> MemOp:
        return self.op


class TableOracle:
    """Looks labels up in a fixed table of annotated pairs.

    Unknown pairs get ``default`` and are recorded in ``misses``.
    """

    concurrent_safe = True

    def __init__(self, pairs: Iterable[LabeledPair], default: MemOp = MemOp.APPEND):
        self.default = MemOp(default)
        self.table: Dict[Tuple[str, str], MemOp] = {}
        self.misses: List[Tuple[str, str]] = []
        for p in pairs:
            key = (normalize(p.m_text), normalize(p.s_text))
            if key in self.table:
                raise DuplicateKey(f"pair {key!r} appears twice in the table")
            self.table[key] = p.op

    @property
    def miss_count(self) -> int:
        return len(self.misses)

    def classify(self, m_text: str, s_text: str) -> MemOp:
        key = (normalize(m_text), normalize(s_text))
        op = self.table.get(key)
        if op is None:
            self.misses.append(key)
            return self.default
        return op


def table_oracle(pairs: Iterable[LabeledPair], default: MemOp = MemOp.APPEND) -> TableOracle:
    return TableOracle(pairs, default)


# NLI transfer


class NliLabel(str, Enum):
    ENTAILMENT = "ENTAILMENT"
    NEUTRAL = "NEUTRAL"
    CONTRADICTION = "CONTRADICTION"


_NLI_TOKENS = {"0": NliLabel.ENTAILMENT, "1": NliLabel.NEUTRAL, "2": NliLabel.CONTRADICTION}


@dataclass(frozen=True)
class NliVerdict:
    label: NliLabel
    confidence: float = 1.0  # carried, not used for decisions

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", NliLabel(self.label))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def nli_to_op(forward: NliVerdict, reverse: Optional[NliVerdict] = None) -> MemOp:
    """Map NLI verdicts to a memory operation. Never returns DELETE.

    ``forward`` is NLI(premise=m, hypothesis=s); ``reverse`` is NLI(s, m) and is
    only consulted when the forward verdict is neutral.
    """
    if forward.label is NliLabel.CONTRADICTION:
        return MemOp.REPLACE
    if forward.label is NliLabel.ENTAILMENT:
        return MemOp.PASS
    if reverse is None:
        raise ValueError("neutral forward verdict needs the reverse verdict")
    if reverse.label is NliLabel.ENTAILMENT:
        return MemOp.REPLACE
    return MemOp.APPEND


class NliClassifier:
    """Adapts any NLI predictor ``nli(premise, hypothesis) -> NliVerdict``."""

    def __init__(self, nli: Callable[[str, str], NliVerdict], concurrent_safe: bool = True):
        self.nli = nli
        self.concurrent_safe = concurrent_safe

    def classify(self, m_text: str, s_text: str) -> MemOp:
        forward = self.nli(m_text, s_text)
        if forward.label is NliLabel.NEUTRAL:
            return nli_to_op(forward, self.nli(s_text, m_text))
        return nli_to_op(forward)


# Lexical heuristic

DEFAULT_NEGATIONS: FrozenSet[str] = frozenset({
    "not", "no", "never", "none", "nothing", "without",
    "n't", "don't", "doesn't", "didn't", "isn't", "aren't", "wasn't", "weren't",
    "hasn't", "haven't", "hadn't", "can't", "cannot", "couldn't", "won't", "wouldn't",
    "안", "못", "없다", "않다",
})


@functools.lru_cache(maxsize=4096)
def _token_set(text: str) -> Tuple[str, FrozenSet[str]]:
    norm = normalize(text)
    return norm, frozenset(norm.split())


class LexicalHeuristic:
    """Token-overlap stand-in for a trained classifier.

    Subset relations decide PASS/REPLACE; high overlap with a negation on only
    one side counts as a contradiction. Never emits DELETE.
    """

    concurrent_safe = True

    def __init__(self, threshold: float = 0.5, negations: Iterable[str] = DEFAULT_NEGATIONS):
        self.threshold = threshold
        self.negations = frozenset(t.lower() for t in negations)

    def _negated(self, tokens: FrozenSet[str]) -> bool:
        return not self.negations.isdisjoint(t.lower() for t in tokens)

    def classify(self, m_text: str, s_text: str) -> MemOp:
        m, mt = _token_set(m_text)
        s, st = _token_set(s_text)
        if not m or not s:
            raise EmptyText("lexical heuristic needs non-empty texts")
        if m == s:
            return MemOp.PASS
        if st <= mt:
            return MemOp.PASS
        if mt < st:
            return MemOp.REPLACE
        jaccard = len(mt & st) / len(mt | st)
        if jaccard >= self.threshold and self._negated(mt) != self._negated(st):
            return MemOp.REPLACE
        return MemOp.APPEND


def lexical_heuristic(m_text: str, s_text: str, threshold: float = 0.5,
                      negations: Iterable[str] = DEFAULT_NEGATIONS) -> MemOp:
    return LexicalHeuristic(threshold, negations).classify(m_text, s_text)


# Remote text-to-text protocol


def format_pair_input(first: str, second: str) -> str:
    return f"sentence 1: {first} sentence 2: {second}"


class _TextToTextClient:
    """POSTs one sentence pair, expects ``{"label": "<token>"}`` back."""

    concurrent_safe = True

    def __init__(self, endpoint: str, timeout: float = 5.0, retries: int = 0,
                 max_in_flight: int = 4, session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()
        self._cache: Dict[Tuple[str, str], object] = {}
        self._cache_lock = threading.Lock()
        self.requests_sent = 0

    def _post(self, first: str, second: str) -> dict:
        body = {"input": format_pair_input(first, second), "sentence1": first, "sentence2": second}
        last: Optional[ClassifierFailure] = None
        for _ in range(self.retries + 1):
            try:
                with self._slots:
                    self.requests_sent += 1
                    resp = self._session.post(self.endpoint, json=body, timeout=self.timeout)
                resp.raise_for_status()
            except requests.Timeout as exc:
                last = ClassifierTimeout(f"{self.endpoint} timed out: {exc}", pair=(first, second))
                continue
            except requests.RequestException as exc:
                last = TransportError(f"{self.endpoint}: {exc}", pair=(first, second))
                continue
            try:
                payload = resp.json()
            except ValueError:
                raise MalformedResponse("response is not JSON", pair=(first, second)) from None
            if not isinstance(payload, dict) or not isinstance(payload.get("label"), str):
                raise MalformedResponse(f"response lacks a string 'label': {payload!r}", pair=(first, second))
            return payload
        logger.warning("giving up on %s after %d attempt(s)", self.endpoint, self.retries + 1)
        assert last is not None
        raise last

    def _cached(self, first: str, second: str, parse):
        key = (normalize(first), normalize(second))
        with self._cache_lock:
            if key in self._cache:
                return self._cache[key]
        value = parse(self._post(first, second))
        with self._cache_lock:
            self._cache.setdefault(key, value)
            return self._cache[key]


class RemoteClassifier(_TextToTextClient):
    """Memory-operation classifier served over HTTP. Responses are cached per pair."""

    def classify(self, m_text: str, s_text: str) -> MemOp:
        def parse(payload: dict) -> MemOp:
            token = payload["label"].strip()
            try:
                return MemOp.from_token(token)
            except ValueError:
                raise MalformedResponse(f"label token {token!r} outside 0-3", pair=(m_text, s_text)) from None

        return self._cached(m_text, s_text, parse)


class RemoteNli(_TextToTextClient):
    """NLI predictor over the same protocol; tokens 0/1/2 = entailment/neutral/contradiction."""

    def __call__(self, premise: str, hypothesis: str) -> NliVerdict:
        def parse(payload: dict) -> NliVerdict:
            token = payload["label"].strip()
            if token not in _NLI_TOKENS:
                raise MalformedResponse(f"NLI token {token!r} outside 0-2", pair=(premise, hypothesis))
            try:
                confidence = float(payload.get("confidence", 1.0))
                return NliVerdict(_NLI_TOKENS[token], confidence)
            except (TypeError, ValueError) as exc:
                raise MalformedResponse(str(exc), pair=(premise, hypothesis)) from None

        return self._cached(premise, hypothesis, parse)


def remote_classify(endpoint: str, m_text: str, s_text: str, timeout: float = 5.0) -> MemOp:
    return RemoteClassifier(endpoint, timeout=timeout).classify(m_text, s_text)


# Wrappers


def classify_batch(classifier: OperationClassifier, pairs: Sequence[Tuple[str, str]]) -> List[MemOp]:
    """Classify pairs in order, calling the backend once per distinct pair.

    A failure aborts the batch; the raised error carries the index of the first
    failing pair.
    """
    seen: Dict[Tuple[str, str], MemOp] = {}
    out = []
    for i, (m, s) in enumerate(pairs):
        key = (normalize(m), normalize(s))
        if key not in seen:
            try:
                seen[key] = MemOp(classifier.classify(m, s))
            except ClassifierFailure as exc:
                exc.index = i
                if exc.pair is None:
                    exc.pair = (m, s)
                raise
            except ValueError:
                raise ClassifierFailure("classifier returned an unknown label", pair=(m, s), index=i) from None
        out.append(seen[key])
    return out


class CountingClassifier:
    """Counts calls to the wrapped backend."""

    def __init__(self, base: OperationClassifier):
        self.base = base
        self.calls = 0
        self.concurrent_safe = getattr(base, "concurrent_safe", True)

    def classify(self, m_text: str, s_text: str) -> MemOp:
        self.calls += 1
        return self.base.classify(m_text, s_text)


class NoisyClassifier:
    """Corrupts a base classifier's label with probability ``epsilon``.

    The corruption is a pure function of (seed, pair), so repeated calls agree.
    """

    concurrent_safe = True
    _ORDER = (MemOp.PASS, MemOp.REPLACE, MemOp.APPEND, MemOp.DELETE)

    def __init__(self, base: OperationClassifier, epsilon: float, seed: int = 0):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self.base = base
        self.epsilon = epsilon
        self.seed = seed

    def _draw(self, m_text: str, s_text: str) -> Tuple[float, int]:
        h = hashlib.blake2b(f"{self.seed}\x1f{normalize(m_text)}\x1f{normalize(s_text)}".encode(),
                            digest_size=16).digest()
        return int.from_bytes(h[:8], "big") / 2.0 ** 64, h[8] % 3

    def classify(self, m_text: str, s_text: str) -> MemOp:
        op = self.base.classify(m_text, s_text)
        u, pick = self._draw(m_text, s_text)
        if u < self.epsilon:
            others = [o for o in self._ORDER if o is not op]
            return others[pick]
        return op
