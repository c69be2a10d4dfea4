"""Multi-session episode loop.

Within a session every user turn gets a bot reply conditioned on the top-k
memory sentences. Closing a session summarizes it, merges the summary into
memory under the episode's policy, and opens the next session with the result.
"""

from __future__ import annotations

import json
import logging
import os
import random
import tempfile
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from .classify import ConstantClassifier, CountingClassifier, LabeledPair, OperationClassifier
from .clients import Generator, Summarizer
from .errors import ChainBreak, ConfigError, EpisodeBusy, EpisodeClosed, InputError, MissingGold, SchemaViolation
from .memory import MemOp, MemoryState, MemoryUpdateResult, SummaryBatch, update_memory
from .retrieval import DEFAULT_K, Embedder, HashedNgramEmbedder, retrieve_top_k
from .text import normalize

logger = logging.getLogger(__name__)


class Speaker(str, Enum):
    BOT = "bot"
    USER = "user"


@dataclass(frozen=True)
class Turn:
    speaker: Speaker
    text: str
    turn_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "speaker", Speaker(self.speaker))

    def to_dict(self) -> Dict[str, str]:
        return {"speaker": self.speaker.value, "text": self.text}


class MemoryPolicy(str, Enum):
    WITHOUT_MEMORY = "WITHOUT_MEMORY"
    MEMORY_ACCUMULATE = "MEMORY_ACCUMULATE"
    MEMORY_UPDATE = "MEMORY_UPDATE"
    MEMORY_GOLD = "MEMORY_GOLD"

    @classmethod
    def parse(cls, name: str) -> "MemoryPolicy":
        key = name.strip().upper().replace("-", "_")
        aliases = {"NONE": "WITHOUT_MEMORY", "ACCUMULATE": "MEMORY_ACCUMULATE",
                   "UPDATE": "MEMORY_UPDATE", "GOLD": "MEMORY_GOLD"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown memory policy {name!r}") from None


class EpisodeStatus(str, Enum):
    OPEN = "OPEN"
    CLOSED = "CLOSED"


@dataclass
class Session:
    session_index: int
    turns: List[Turn] = field(default_factory=list)
    memory_before: MemoryState = field(default_factory=MemoryState)
    summary: Optional[SummaryBatch] = None
    memory_after: Optional[MemoryState] = None
    elapsed_days: int = 0
    # gold pairwise labels, when the source dataset provides them
    gold_ops: Tuple[LabeledPair, ...] = ()

    @property
    def closed(self) -> bool:
        return self.summary is not None and self.memory_after is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.session_index,
            "elapsed_days": self.elapsed_days,
            "turns": [t.to_dict() for t in self.turns],
            "memory_before": self.memory_before.to_json(),
            "summary": None if self.summary is None else self.summary.to_json(),
            "memory_after": None if self.memory_after is None else self.memory_after.to_json(),
            "ops": [{"m": p.m_text, "s": p.s_text, "gold": p.gold} for p in self.gold_ops],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Session":
        i = int(d["index"])
        return cls(
            session_index=i,
            turns=[Turn(t["speaker"], t["text"], n) for n, t in enumerate(d.get("turns", []))],
            memory_before=MemoryState.from_json(d.get("memory_before", []), i),
            summary=None if d.get("summary") is None else SummaryBatch.from_json(d["summary"], i),
            memory_after=None if d.get("memory_after") is None else MemoryState.from_json(d["memory_after"], i + 1),
            elapsed_days=int(d.get("elapsed_days", 0)),
            gold_ops=tuple(LabeledPair(o["m"], o["s"], o["gold"]) for o in d.get("ops", [])),
        )


@dataclass
class Episode:
    episode_id: str
    sessions: List[Session]
    policy: MemoryPolicy = MemoryPolicy.MEMORY_UPDATE
    status: EpisodeStatus = EpisodeStatus.OPEN
    _lock: threading.Lock = field(default_factory=threading.Lock, compare=False, repr=False)

    @property
    def current(self) -> Session:
        return self.sessions[-1]

    def validate(self) -> None:
        """Check index contiguity, the empty first memory, and memory chaining."""
        for pos, s in enumerate(self.sessions, 1):
            if s.session_index != pos:
                raise ChainBreak(self.episode_id, s.session_index, f"expected session index {pos}")
            check_alternation(s.turns)
        if self.sessions and len(self.sessions[0].memory_before):
            raise ChainBreak(self.episode_id, 1, "first session must start with empty memory")
        for prev, nxt in zip(self.sessions, self.sessions[1:]):
            if prev.memory_after is not None and set(prev.memory_after.texts) != set(nxt.memory_before.texts):
                raise ChainBreak(self.episode_id, nxt.session_index,
                                 "memory_before differs from the previous memory_after")


def check_alternation(turns: Sequence[Turn]) -> None:
    for a, b in zip(turns, turns[1:]):
        if a.speaker is b.speaker:
            raise SchemaViolation(f"turn {b.turn_index} repeats speaker {b.speaker.value!r}", field="turns")


@dataclass(frozen=True)
class SessionClosure:
    session: Session
    summary: SummaryBatch
    memory_after: MemoryState
    update: Optional[MemoryUpdateResult]


def _dedupe(sentences: Sequence[str]) -> List[str]:
    out: List[str] = []
    for s in sentences:
        s = normalize(s)
        if s and s not in out:
            out.append(s)
    return out


class EpisodeLog:
    """One directory per episode: ``session_<i>.json`` per closed session and
    ``memory_latest.json`` with the memory the next session starts from."""

    def __init__(self, root: str):
        self.root = root

    def _dir(self, episode_id: str) -> str:
        return os.path.join(self.root, episode_id)

    @staticmethod
    def _atomic_write(path: str, payload: Any) -> None:
        directory = os.path.dirname(path)
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(payload, f, ensure_ascii=False, indent=2)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def write_session(self, episode: Episode, session: Session) -> None:
        self._atomic_write(os.path.join(self._dir(episode.episode_id), f"session_{session.session_index}.json"),
                           {"episode_id": episode.episode_id, "policy": episode.policy.value,
                            "session": session.to_dict()})

    def write_latest(self, episode: Episode, memory: MemoryState, next_session: Optional[Session],
                     status: EpisodeStatus) -> None:
        self._atomic_write(os.path.join(self._dir(episode.episode_id), "memory_latest.json"), {
            "episode_id": episode.episode_id,
            "policy": episode.policy.value,
            "status": status.value,
            "session_index": memory.session_index,
            "elapsed_days": None if next_session is None else next_session.elapsed_days,
            "memory": memory.to_json(),
        })

    def load(self, episode_id: str) -> Episode:
        directory = self._dir(episode_id)
        latest_path = os.path.join(directory, "memory_latest.json")
        if not os.path.exists(latest_path):
            raise InputError(f"no episode log at {directory}")
        with open(latest_path, encoding="utf-8") as f:
            latest = json.load(f)
        # memory_latest is the commit point; later session files are ignored
        idx = int(latest["session_index"])
        sessions = []
        for i in range(1, idx):
            path = os.path.join(directory, f"session_{i}.json")
            if not os.path.exists(path):
                raise ChainBreak(episode_id, i, "session log missing")
            with open(path, encoding="utf-8") as f:
                sessions.append(Session.from_dict(json.load(f)["session"]))
        status = EpisodeStatus(latest["status"])
        if status is EpisodeStatus.OPEN:
            sessions.append(Session(idx, [], MemoryState.from_json(latest["memory"], idx),
                                    elapsed_days=int(latest.get("elapsed_days") or 0)))
        episode = Episode(latest["episode_id"], sessions, MemoryPolicy(latest["policy"]), status)
        episode.validate()
        return episode


class Orchestrator:
    """Drives episodes against a generator, a summarizer and a classifier.

    ``retrieval_calls`` and ``classifier.calls`` count work done, so callers can
    check that a policy skipped what it should skip.
    """

    def __init__(
        self,
        generator: Generator,
        summarizer: Summarizer,
        classifier: Optional[OperationClassifier] = None,
        embedder: Optional[Embedder] = None,
        k: int = DEFAULT_K,
        log_dir: Optional[str] = None,
        gold: Optional[Episode] = None,
        include_history: bool = False,
        max_memory: Optional[int] = None,
        seed: Optional[int] = None,
    ):
        if k < 1:
            raise ConfigError("k must be >= 1")
        self.generator = generator
        self.summarizer = summarizer
        self.classifier = CountingClassifier(classifier) if classifier is not None else None
        self.embedder = embedder or HashedNgramEmbedder()
        self.k = k
        self.log = EpisodeLog(log_dir) if log_dir else None
        self.gold = gold
        self.include_history = include_history
        self.max_memory = max_memory
        self.retrieval_calls = 0
        self.last_request: Optional[Dict[str, Any]] = None
        self._rng = random.Random(seed)
        self._gold_by_episode: Dict[str, Episode] = {}

    def _elapsed_days(self) -> int:
        return self._rng.randint(7, 14)

    def start_episode(self, policy: MemoryPolicy, gold: Optional[Episode] = None,
                      episode_id: Optional[str] = None) -> Episode:
        policy = MemoryPolicy(policy)
        gold = gold or self.gold
        if policy is MemoryPolicy.MEMORY_GOLD and gold is None:
            raise ConfigError("MEMORY_GOLD needs a gold episode")
        if policy is MemoryPolicy.MEMORY_UPDATE and self.classifier is None:
            raise ConfigError("MEMORY_UPDATE needs a classifier")
        episode = Episode(episode_id or uuid.uuid4().hex, [Session(1, [], MemoryState((), 1))], policy)
        if gold is not None:
            self._gold_by_episode[episode.episode_id] = gold
        return episode

    @contextmanager
    def _writer(self, episode: Episode) -> Iterator[None]:
        if episode.status is EpisodeStatus.CLOSED:
            raise EpisodeClosed(f"episode {episode.episode_id} is closed")
        if not episode._lock.acquire(blocking=False):
            raise EpisodeBusy(f"episode {episode.episode_id} is busy")
        try:
            yield
        finally:
            episode._lock.release()

    def retrieve(self, episode: Episode) -> List[str]:
        """Memory sentences that would condition the next reply."""
        if episode.policy is MemoryPolicy.WITHOUT_MEMORY:
            return []
        session = episode.current
        self.retrieval_calls += 1
        return retrieve_top_k(session.turns, session.memory_before, self.embedder, self.k).texts

    def _reply(self, episode: Episode) -> str:
        session = episode.current
        context: List[Turn] = []
        if self.include_history:
            for s in episode.sessions[:-1]:
                context.extend(s.turns)
        context.extend(session.turns)
        memory = self.retrieve(episode)
        self.last_request = {"context": [t.to_dict() for t in context], "memory": memory}
        text = self.generator.generate(context, memory)
        session.turns.append(Turn(Speaker.BOT, text, len(session.turns)))
        return text

    def open_turn(self, episode: Episode) -> str:
        """Let the bot speak first in an empty session."""
        with self._writer(episode):
            if episode.current.turns:
                raise InputError("the session already has turns")
            return self._reply(episode)

    def step_turn(self, episode: Episode, user_text: str) -> str:
        with self._writer(episode):
            session = episode.current
            if session.turns and session.turns[-1].speaker is Speaker.USER:
                raise InputError("previous user turn still awaits a reply; call retry_turn")
            if not normalize(user_text):
                raise InputError("empty user utterance")
            session.turns.append(Turn(Speaker.USER, user_text, len(session.turns)))
            return self._reply(episode)

    def retry_turn(self, episode: Episode) -> str:
        """Regenerate the reply after a generator failure."""
        with self._writer(episode):
            session = episode.current
            if not session.turns or session.turns[-1].speaker is not Speaker.USER:
                raise InputError("no pending user turn")
            return self._reply(episode)

    def _merge(self, episode: Episode, session: Session, summary: SummaryBatch):
        before = session.memory_before
        policy = episode.policy
        if policy is MemoryPolicy.WITHOUT_MEMORY:
            return MemoryState((), session.session_index + 1), None
        if policy is MemoryPolicy.MEMORY_ACCUMULATE:
            result = update_memory(before, summary, ConstantClassifier(MemOp.APPEND), self.max_memory)
            return result.new_memory, result
        if policy is MemoryPolicy.MEMORY_UPDATE:
            result = update_memory(before, summary, self.classifier, self.max_memory)
            return result.new_memory, result
        gold = self._gold_by_episode.get(episode.episode_id)
        if gold is None or len(gold.sessions) < session.session_index:
            raise MissingGold(f"no gold session {session.session_index}")
        gold_after = gold.sessions[session.session_index - 1].memory_after
        if gold_after is None:
            raise MissingGold(f"gold session {session.session_index} has no memory snapshot")
        return gold_after, None

    def end_session(self, episode: Episode) -> SessionClosure:
        """Summarize, update memory, persist, then open the next session.

        Nothing in ``episode`` changes unless every step succeeds.
        """
        with self._writer(episode):
            session = episode.current
            if not session.turns:
                raise InputError("cannot close a session without turns")
            texts = _dedupe(self.summarizer.summarize(list(session.turns)))
            summary = SummaryBatch.from_texts(texts, session.session_index)
            memory_after, result = self._merge(episode, session, summary)
            closed = replace(session, turns=list(session.turns), summary=summary, memory_after=memory_after)
            nxt = Session(session.session_index + 1, [], memory_after, elapsed_days=self._elapsed_days())
            if self.log is not None:
                self.log.write_session(episode, closed)
                self.log.write_latest(episode, memory_after, nxt, EpisodeStatus.OPEN)
            episode.sessions[-1] = closed
            episode.sessions.append(nxt)
            return SessionClosure(closed, summary, memory_after, result)

    def close_episode(self, episode: Episode) -> None:
        """Mark the episode finished. The current session must be empty."""
        with self._writer(episode):
            if episode.current.turns:
                raise InputError("end the current session before closing the episode")
            if self.log is not None:
                self.log.write_latest(episode, episode.current.memory_before, None, EpisodeStatus.CLOSED)
            episode.sessions.pop()
            episode.status = EpisodeStatus.CLOSED


def replay_episode(
    gold_episode: Episode,
    policy: MemoryPolicy,
    classifier: Optional[OperationClassifier] = None,
    max_memory: Optional[int] = None,
) -> Dict[int, MemoryState]:
    """Feed gold summaries through a policy; return predicted memory per session.

    Keys are the sessions the memory serves (2..N for an N-session episode).
    No generator or summarizer is involved.
    """
    policy = MemoryPolicy(policy)
    if policy is MemoryPolicy.MEMORY_UPDATE and classifier is None:
        raise ConfigError("MEMORY_UPDATE replay needs a classifier")
    predicted: Dict[int, MemoryState] = {}
    memory = MemoryState((), 1)
    for session, nxt in zip(gold_episode.sessions, gold_episode.sessions[1:]):
        i = session.session_index
        if session.summary is None:
            raise MissingGold(f"episode {gold_episode.episode_id}: session {i} has no gold summary")
        if policy is MemoryPolicy.WITHOUT_MEMORY:
            memory = MemoryState((), i + 1)
        elif policy is MemoryPolicy.MEMORY_GOLD:
            memory = nxt.memory_before
        else:
            clf = ConstantClassifier(MemOp.APPEND) if policy is MemoryPolicy.MEMORY_ACCUMULATE else classifier
            memory = update_memory(memory, session.summary, clf, max_memory).new_memory
        predicted[i + 1] = memory
    return predicted


def gold_snapshots(gold_episode: Episode) -> Dict[int, MemoryState]:
    return {s.session_index: s.memory_before for s in gold_episode.sessions[1:]}


@dataclass
class ReplayReport:
    """Set F1 of predicted against gold memory, grouped by session index."""

    policy: MemoryPolicy
    scores: Dict[int, List[float]] = field(default_factory=dict)

    def add(self, session_index: int, f1: float) -> None:
        self.scores.setdefault(session_index, []).append(f1)

    def by_session(self) -> Dict[int, float]:
        return {i: sum(v) / len(v) for i, v in sorted(self.scores.items())}

    @property
    def aggregate(self) -> float:
        flat = [x for v in self.scores.values() for x in v]
        return sum(flat) / len(flat) if flat else 0.0

    def to_json(self) -> Dict[str, Any]:
        return {"policy": self.policy.value, "aggregate_f1": self.aggregate,
                "by_session": {str(i): f for i, f in self.by_session().items()},
                "n": {str(i): len(v) for i, v in sorted(self.scores.items())}}


def replay_corpus(
    episodes: Sequence[Episode],
    policy: MemoryPolicy,
    classifier: Optional[OperationClassifier] = None,
    classifier_for: Optional[Callable[[Episode], OperationClassifier]] = None,
    max_memory: Optional[int] = None,
    workers: int = 1,
) -> ReplayReport:
    """Replay every episode and score each snapshot with set F1.

    ``classifier_for`` builds a per-episode classifier (e.g. from its gold labels)
    and takes precedence over ``classifier``.
    """
    from .metrics import set_f1

    policy = MemoryPolicy(policy)

    def one(ep: Episode) -> List[Tuple[int, float]]:
        clf = classifier_for(ep) if classifier_for is not None else classifier
        predicted = replay_episode(ep, policy, clf, max_memory)
        gold = gold_snapshots(ep)
        return [(i, set_f1(predicted[i], gold[i]).f1) for i in sorted(predicted)]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, episodes))
    else:
        results = [one(ep) for ep in episodes]
    report = ReplayReport(policy)
    for rows in results:
        for i, f1 in rows:
            report.add(i, f1)
    return report
