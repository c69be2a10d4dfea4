"""Top-k memory retrieval by cosine similarity, plus triplet-margin evaluation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from ._jsonl import read_jsonl
from .errors import DimensionMismatch, EmptyInput, SchemaViolation
from .memory import MemorySentence, MemoryState
from .text import normalize

DEFAULT_K = 5
DEFAULT_MARGIN = 0.2
DEFAULT_WINDOW = 4

# A dialogue context is a list of turns; bare strings are accepted too.
DialogueContext = Sequence[Any]


def context_texts(context: DialogueContext) -> List[str]:
    return [t if isinstance(t, str) else t.text for t in context]


class Embedder(Protocol):
    dim: int

    def embed_context(self, context: DialogueContext) -> np.ndarray: ...

    def embed_memory(self, text: str) -> np.ndarray: ...


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


class HashedNgramEmbedder:
    """Bag of hashed character n-grams with term-frequency weights.

    Deterministic, dependency-free stand-in for a trained sentence encoder.
    Inputs with no n-gram map to the first basis vector; ``last_was_fallback``
    records when that happened.
    """

    def __init__(self, n: int = 3, dim: int = 256, seed: int = 0, window: int = DEFAULT_WINDOW):
        if n < 1 or dim < 1 or window < 1:
            raise ValueError("n, dim and window must be positive")
        self.n = n
        self.dim = dim
        self.seed = seed
        self.window = window
        self._key = seed.to_bytes(8, "big", signed=True)
        self.last_was_fallback = False

    def grams(self, text: str) -> List[str]:
        text = normalize(text)
        return [text[i:i + self.n] for i in range(len(text) - self.n + 1)]

    def _bucket(self, gram: str) -> int:
        h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key)
        return int.from_bytes(h.digest(), "big") % self.dim

    def embed_text(self, text: str) -> Tuple[np.ndarray, bool]:
        """Return (unit vector, used_fallback)."""
        vec = np.zeros(self.dim)
        for g in self.grams(text):
            vec[self._bucket(g)] += 1.0
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            return vec, True
        return vec / norm, False

    def embed_memory(self, text: str) -> np.ndarray:
        vec, self.last_was_fallback = self.embed_text(text)
        return vec

    def embed_context(self, context: DialogueContext) -> np.ndarray:
        recent = context_texts(context)[-self.window:]
        vec, self.last_was_fallback = self.embed_text(" ".join(recent))
        return vec


def default_embedder(n: int = 3, dim: int = 256, seed: int = 0, window: int = DEFAULT_WINDOW) -> HashedNgramEmbedder:
    return HashedNgramEmbedder(n=n, dim=dim, seed=seed, window=window)


class MemoryEmbeddingCache:
    """Embeddings keyed by sentence id, valid for one MemoryState snapshot."""

    def __init__(self, embedder: Embedder):
        self.embedder = embedder
        self._state: Optional[MemoryState] = None
        self._vectors: Dict[str, np.ndarray] = {}

    def vectors(self, memory: MemoryState) -> List[np.ndarray]:
        if self._state is not memory:
            self._state = memory
            self._vectors = {}
        out = []
        for s in memory:
            v = self._vectors.get(s.id)
            if v is None:
                v = self._vectors[s.id] = self.embedder.embed_memory(s.text)
            out.append(v)
        return out


@dataclass(frozen=True)
class RetrievalResult:
    ranked: Tuple[Tuple[MemorySentence, float], ...]
    k_requested: int

    @property
    def sentences(self) -> List[MemorySentence]:
        return [s for s, _ in self.ranked]

    @property
    def texts(self) -> List[str]:
        return [s.text for s, _ in self.ranked]


def retrieve_top_k(
    context: DialogueContext,
    memory: MemoryState,
    embedder: Embedder,
    k: int = DEFAULT_K,
    cache: Optional[MemoryEmbeddingCache] = None,
) -> RetrievalResult:
    """Exact top-k by cosine similarity; ties go to the earlier memory position."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(memory):
        return RetrievalResult((), k)
    query = embedder.embed_context(context)
    vectors = cache.vectors(memory) if cache is not None else [embedder.embed_memory(s.text) for s in memory]
    scores = [cosine_sim(query, v) for v in vectors]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    return RetrievalResult(tuple((memory.sentences[i], scores[i]) for i in order), k)


@dataclass(frozen=True)
class Triplet:
    context: Tuple[str, ...]
    positive: str
    negative: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "context", tuple(context_texts(self.context)))
        if normalize(self.positive) == normalize(self.negative):
            raise SchemaViolation("positive and negative must differ", field="negative")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Triplet":
        try:
            return cls(tuple(data["context_turns"]), data["positive"], data["negative"])
        except KeyError as exc:
            raise SchemaViolation("missing key", field=exc.args[0]) from None


@dataclass
class TripletReport:
    losses: List[float]
    pos_sims: List[float]
    neg_sims: List[float]
    margin: float
    mean_loss: float = field(init=False)
    satisfaction_rate: float = field(init=False)
    win_rate: float = field(init=False)

    def __post_init__(self) -> None:
        n = len(self.losses)
        self.mean_loss = sum(self.losses) / n
        self.satisfaction_rate = sum(p >= q + self.margin for p, q in zip(self.pos_sims, self.neg_sims)) / n
        self.win_rate = sum(p > q for p, q in zip(self.pos_sims, self.neg_sims)) / n

    @property
    def n(self) -> int:
        return len(self.losses)

    def to_json(self) -> Dict[str, Any]:
        return {"mean_loss": self.mean_loss, "satisfaction_rate": self.satisfaction_rate,
                "win_rate": self.win_rate, "n": self.n, "margin": self.margin}


def triplet_eval(triplets: Iterable[Triplet], embedder: Embedder, margin: float = DEFAULT_MARGIN) -> TripletReport:
    """Hinge loss max(sim(D, neg) - sim(D, pos) + margin, 0) per triplet.

    Zero loss means the positive beats the negative by at least the margin.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    triplets = list(triplets)
    if not triplets:
        raise EmptyInput("no triplets to evaluate")
    losses, pos, neg = [], [], []
    for t in triplets:
        q = embedder.embed_context(list(t.context))
        p = cosine_sim(q, embedder.embed_memory(t.positive))
        m = cosine_sim(q, embedder.embed_memory(t.negative))
        pos.append(p)
        neg.append(m)
        losses.append(max(m - p + margin, 0.0))
    return TripletReport(losses, pos, neg, margin)


def load_triplets(path: str) -> List[Triplet]:
    out = []
    for lineno, obj in read_jsonl(path):
        if not isinstance(obj, dict):
            raise SchemaViolation("expected an object", line=lineno)
        out.append(Triplet.from_dict(obj))
    return out
