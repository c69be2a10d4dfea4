"""Episode and pair datasets: loading, writing, statistics, synthetic drift.

Canonical episode JSONL, one episode per line::

    {"episode_id": ..., "sessions": [{"index": 1, "elapsed_days": 0,
        "turns": [{"speaker": "bot", "text": ...}, ...],
        "summary": [text, ...], "memory_before": [text, ...],
        "memory_after": [text, ...], "ops": [{"m": ..., "s": ..., "gold": ...}]}]}

``ops`` is optional. Other layouts are read through a ``FieldMapping``.
"""

from __future__ import annotations

import json
import logging
import os
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from ._jsonl import read_jsonl, write_jsonl
from .classify import FUSION, PAIR_LABELS, LabeledPair, TableOracle
from .errors import ChainBreak, EmptyInput, InputError, ScriptOverflow, SchemaViolation, UnknownLabel
from .memory import MemOp, MemorySentence, MemoryState, Origin, SummaryBatch, update_memory_oracle
from .metrics import distinct_n, render_table
from .orchestrator import Episode, EpisodeLog, EpisodeStatus, MemoryPolicy, Session, Speaker, Turn, check_alternation
from .text import normalize, tokenize

logger = logging.getLogger(__name__)


@dataclass
class FieldMapping:
    """Where each canonical field lives in a source record.

    Values are keys, or dotted paths for nested objects. ``speaker_values`` maps
    source speaker labels to ``bot``/``user``.
    """

    episode_id: str = "episode_id"
    sessions: str = "sessions"
    index: str = "index"
    elapsed_days: str = "elapsed_days"
    turns: str = "turns"
    speaker: str = "speaker"
    text: str = "text"
    summary: str = "summary"
    memory_before: str = "memory_before"
    memory_after: str = "memory_after"
    ops: str = "ops"
    speaker_values: Dict[str, str] = field(default_factory=lambda: {"bot": "bot", "user": "user"})

    @classmethod
    def from_file(cls, path: str) -> "FieldMapping":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaViolation(f"unknown mapping keys: {sorted(unknown)}")
        return cls(**data)


_MISSING = object()


def _get(obj: Mapping[str, Any], path: str, default: Any = _MISSING) -> Any:
    cur: Any = obj
    for part in path.split("."):
        if not isinstance(cur, Mapping) or part not in cur:
            if default is _MISSING:
                raise KeyError(path)
            return default
        cur = cur[part]
    return cur


def _text_list(value: Any, name: str, lineno: int) -> Optional[List[str]]:
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaViolation("expected a list of strings", field=name, line=lineno)
    out: List[str] = []
    for v in value:
        t = normalize(v)
        if not t:
            continue
        if t in out:
            logger.warning("line %d: duplicate sentence in %s dropped: %r", lineno, name, t)
            continue
        out.append(t)
    return out


def _parse_turns(raw: Any, m: FieldMapping, lineno: int) -> List[Turn]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise SchemaViolation("expected a list", field=m.turns, line=lineno)
    turns = []
    for n, t in enumerate(raw):
        if isinstance(t, str):
            # bare utterances alternate, bot first
            speaker = Speaker.BOT if n % 2 == 0 else Speaker.USER
            text = t
        elif isinstance(t, Mapping):
            try:
                label = str(_get(t, m.speaker))
                text = _get(t, m.text)
            except KeyError as exc:
                raise SchemaViolation("missing turn key", field=exc.args[0], line=lineno) from None
            canon = m.speaker_values.get(label, m.speaker_values.get(label.lower()))
            if canon not in ("bot", "user"):
                raise SchemaViolation(f"unknown speaker {label!r}", field=m.speaker, line=lineno)
            speaker = Speaker(canon)
        else:
            raise SchemaViolation("turn must be an object or string", field=m.turns, line=lineno)
        if not isinstance(text, str):
            raise SchemaViolation("turn text must be a string", field=m.text, line=lineno)
        turns.append(Turn(speaker, text, n))
    return turns


def _resolve_memory(texts: List[str], before: MemoryState, summary: Optional[SummaryBatch],
                    session_index: int) -> MemoryState:
    """Attach ids to a text-only memory by matching earlier sentences.

    Memory wins over summary for identical texts; unmatched texts get ``g`` ids.
    """
    pool: Dict[str, MemorySentence] = {}
    if summary is not None:
        pool.update((s.text, s) for s in summary)
    pool.update((s.text, s) for s in before)
    out = []
    for j, t in enumerate(texts, 1):
        s = pool.get(t)
        if s is None:
            s = MemorySentence(f"g{session_index}.{j}", t, session_index, Origin.FROM_SUMMARY)
        out.append(s)
    return MemoryState(tuple(out), session_index + 1)


def _parse_episode(obj: Any, m: FieldMapping, lineno: int) -> Episode:
    if not isinstance(obj, Mapping):
        raise SchemaViolation("episode must be a JSON object", line=lineno)
    try:
        episode_id = str(_get(obj, m.episode_id))
        raw_sessions = _get(obj, m.sessions)
    except KeyError as exc:
        raise SchemaViolation("missing key", field=exc.args[0], line=lineno) from None
    if not isinstance(raw_sessions, list) or not raw_sessions:
        raise SchemaViolation("expected a non-empty list", field=m.sessions, line=lineno)

    sessions: List[Session] = []
    for pos, raw in enumerate(raw_sessions, 1):
        if not isinstance(raw, Mapping):
            raise SchemaViolation("session must be an object", field=m.sessions, line=lineno)
        index = _get(raw, m.index, pos)
        if index != pos:
            raise ChainBreak(episode_id, int(index) if isinstance(index, int) else pos,
                             f"session indices must run 1..n, found {index!r} at position {pos}")
        try:
            elapsed = int(_get(raw, m.elapsed_days, 0) or 0)
        except (TypeError, ValueError):
            raise SchemaViolation("expected an integer", field=m.elapsed_days, line=lineno) from None
        turns = _parse_turns(_get(raw, m.turns, None), m, lineno)
        try:
            check_alternation(turns)
        except SchemaViolation as exc:
            raise SchemaViolation(str(exc), line=lineno) from None
        summary_texts = _text_list(_get(raw, m.summary, None), m.summary, lineno)
        before_texts = _text_list(_get(raw, m.memory_before, None), m.memory_before, lineno)
        after_texts = _text_list(_get(raw, m.memory_after, None), m.memory_after, lineno)
        raw_ops = _get(raw, m.ops, None) or []
        try:
            ops = tuple(LabeledPair(o["m"], o["s"], o["gold"]) for o in raw_ops)
        except (KeyError, TypeError):
            raise SchemaViolation("ops entries need m, s and gold", field=m.ops, line=lineno) from None

        summary = None if summary_texts is None else SummaryBatch.from_texts(summary_texts, pos)
        if pos == 1:
            if before_texts:
                raise ChainBreak(episode_id, 1, "first session must start with empty memory")
            before = MemoryState((), 1)
        else:
            prev = sessions[-1]
            if prev.memory_after is not None:
                if before_texts is not None and set(before_texts) != set(prev.memory_after.texts):
                    raise ChainBreak(episode_id, pos, "memory_before differs from the previous memory_after")
                before = prev.memory_after
            else:
                if before_texts is None:
                    raise ChainBreak(episode_id, pos, "no memory_before and no previous memory_after")
                before = _resolve_memory(before_texts, prev.memory_before, prev.summary, pos - 1)
                prev.memory_after = before
        after = None if after_texts is None else _resolve_memory(after_texts, before, summary, pos)
        sessions.append(Session(pos, turns, before, summary, after, elapsed, ops))

    episode = Episode(episode_id, sessions, MemoryPolicy.MEMORY_GOLD, EpisodeStatus.CLOSED)
    return episode


def load_episodes(path: str, mapping: Optional[FieldMapping] = None) -> List[Episode]:
    """Read episodes from canonical JSONL or from an episode log directory."""
    if os.path.isdir(path):
        if not os.path.exists(os.path.join(path, "memory_latest.json")):
            raise InputError(f"{path} is not an episode log directory")
        root, episode_id = os.path.split(os.path.normpath(path))
        return [EpisodeLog(root).load(episode_id)]
    m = mapping or FieldMapping()
    episodes = []
    seen = set()
    for lineno, obj in read_jsonl(path):
        ep = _parse_episode(obj, m, lineno)
        if ep.episode_id in seen:
            raise SchemaViolation(f"duplicate episode id {ep.episode_id!r}", field=m.episode_id, line=lineno)
        seen.add(ep.episode_id)
        episodes.append(ep)
    return episodes


def episode_record(episode: Episode) -> Dict[str, Any]:
    sessions = []
    for s in episode.sessions:
        rec: Dict[str, Any] = {
            "index": s.session_index,
            "elapsed_days": s.elapsed_days,
            "turns": [t.to_dict() for t in s.turns],
            "summary": None if s.summary is None else s.summary.texts,
            "memory_before": s.memory_before.texts,
            "memory_after": None if s.memory_after is None else s.memory_after.texts,
        }
        if s.gold_ops:
            rec["ops"] = [{"m": p.m_text, "s": p.s_text, "gold": p.gold} for p in s.gold_ops]
        sessions.append(rec)
    return {"episode_id": episode.episode_id, "sessions": sessions}


def dump_episodes(episodes: Iterable[Episode], path: str) -> None:
    write_jsonl(path, (episode_record(e) for e in episodes))


# Pairs


class Split(str, Enum):
    TRAIN = "TRAIN"
    VALID = "VALID"
    TEST = "TEST"


@dataclass(frozen=True)
class PairRecord:
    m: str
    s: str
    gold: str
    split: Optional[Split] = None

    def __post_init__(self) -> None:
        gold = str(self.gold).upper()
        if gold not in PAIR_LABELS:
            raise UnknownLabel(f"unknown pair label {self.gold!r}")
        object.__setattr__(self, "gold", gold)
        if self.split is not None:
            object.__setattr__(self, "split", Split(str(self.split).upper()))

    @property
    def is_fusion(self) -> bool:
        return self.gold == FUSION

    def to_labeled(self) -> LabeledPair:
        return LabeledPair(self.m, self.s, self.gold)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"m": self.m, "s": self.s, "gold": self.gold}
        if self.split is not None:
            d["split"] = self.split.value
        return d


def load_pairs(path: str, keys: Optional[Mapping[str, str]] = None) -> List[PairRecord]:
    """Read ``{m, s, gold[, split]}`` JSONL. FUSION rows are kept but flagged."""
    k = {"m": "m", "s": "s", "gold": "gold", "split": "split", **(keys or {})}
    out = []
    for lineno, obj in read_jsonl(path):
        if not isinstance(obj, Mapping):
            raise SchemaViolation("expected an object", line=lineno)
        try:
            m, s, gold = obj[k["m"]], obj[k["s"]], obj[k["gold"]]
        except KeyError as exc:
            raise SchemaViolation("missing key", field=exc.args[0], line=lineno) from None
        try:
            out.append(PairRecord(m, s, gold, obj.get(k["split"])))
        except UnknownLabel as exc:
            raise UnknownLabel(f"line {lineno}: {exc}") from None
        except ValueError:
            raise SchemaViolation(f"bad split {obj.get(k['split'])!r}", field="split", line=lineno) from None
    return out


def exportable_pairs(records: Iterable[PairRecord]) -> Tuple[List[PairRecord], int]:
    """Drop FUSION rows; return (kept, number dropped)."""
    kept, fusion = [], 0
    for r in records:
        if r.is_fusion:
            fusion += 1
        else:
            kept.append(r)
    if fusion:
        logger.warning("excluded %d FUSION pair(s)", fusion)
    return kept, fusion


def dump_pairs(records: Iterable[PairRecord], path: str) -> int:
    kept, _ = exportable_pairs(records)
    write_jsonl(path, (r.to_dict() for r in kept))
    return len(kept)


def label_distribution(records: Iterable[PairRecord]) -> Dict[str, Any]:
    """Label percentages over non-FUSION rows, plus raw counts."""
    kept, fusion = exportable_pairs(records)
    counts = Counter(r.gold for r in kept)
    n = len(kept)
    return {
        "n": n,
        "fusion_excluded": fusion,
        "counts": {op.value: counts.get(op.value, 0) for op in MemOp},
        "percent": {op.value: (100.0 * counts.get(op.value, 0) / n if n else 0.0) for op in MemOp},
        "by_split": dict(Counter(r.split.value if r.split else "NONE" for r in kept)),
    }


# Statistics


@dataclass
class CorpusStats:
    sessions: int
    sessions_by_index: Dict[int, int]
    turns: int
    avg_turns_per_session: float
    avg_words_per_turn: float
    unique_words: int
    distinct1: float
    distinct2: float
    avg_memory_per_session: float
    avg_summary_per_session: float
    avg_words_per_summary_sentence: float
    summary_distinct1: float
    summary_distinct2: float

    def to_json(self) -> Dict[str, Any]:
        d = asdict(self)
        d["sessions_by_index"] = {str(k): v for k, v in sorted(self.sessions_by_index.items())}
        return d

    def render(self) -> str:
        rows: List[Tuple[str, Any]] = [("Sessions", self.sessions)]
        rows += [(f"  Session {i}", n) for i, n in sorted(self.sessions_by_index.items())]
        rows += [
            ("Turns", self.turns),
            ("Avg. turns per session", self.avg_turns_per_session),
            ("Avg. words per turn", self.avg_words_per_turn),
            ("Unique words for all turns", self.unique_words),
            ("Distinct-1/2 for all turns", f"{self.distinct1:.4f}/{self.distinct2:.4f}"),
            ("Avg. memory sentences per session", self.avg_memory_per_session),
            ("Avg. summary sentences per session", self.avg_summary_per_session),
            ("Avg. words per summary sentence", self.avg_words_per_summary_sentence),
            ("Distinct-1/2 for all summary sentences",
             f"{self.summary_distinct1:.4f}/{self.summary_distinct2:.4f}"),
        ]
        return render_table(rows, ("Statistic", "Value"))


def _mean(total: float, n: int) -> float:
    return total / n if n else 0.0


def corpus_stats(episodes: Sequence[Episode]) -> CorpusStats:
    """Corpus statistics. Memory size is averaged over sessions 2+, where memory exists."""
    sessions = [s for e in episodes for s in e.sessions]
    if not sessions:
        raise EmptyInput("no sessions")
    utterances = [t.text for s in sessions for t in s.turns]
    words = [w for u in utterances for w in tokenize(u)]
    memory_sessions = [s for s in sessions if s.session_index >= 2]
    summarized = [s for s in sessions if s.summary is not None]
    summary_sentences = [t for s in summarized for t in s.summary.texts]
    summary_words = sum(len(tokenize(t)) for t in summary_sentences)
    return CorpusStats(
        sessions=len(sessions),
        sessions_by_index=dict(sorted(Counter(s.session_index for s in sessions).items())),
        turns=len(utterances),
        avg_turns_per_session=_mean(len(utterances), len(sessions)),
        avg_words_per_turn=_mean(len(words), len(utterances)),
        unique_words=len(set(words)),
        distinct1=distinct_n(utterances, 1) if words else 0.0,
        distinct2=distinct_n(utterances, 2) if words else 0.0,
        avg_memory_per_session=_mean(sum(len(s.memory_before) for s in memory_sessions), len(memory_sessions)),
        avg_summary_per_session=_mean(len(summary_sentences), len(summarized)),
        avg_words_per_summary_sentence=_mean(summary_words, len(summary_sentences)),
        summary_distinct1=distinct_n(summary_sentences, 1) if summary_words else 0.0,
        summary_distinct2=distinct_n(summary_sentences, 2) if summary_words else 0.0,
    )


# Synthetic fact drift


@dataclass(frozen=True)
class FactLifecycle:
    """One user fact: introduced, optionally changed, optionally resolved."""

    introduce_session: int
    text_v1: str
    mutate_session: Optional[int] = None
    text_v2: Optional[str] = None
    resolve_session: Optional[int] = None
    resolution_text: Optional[str] = None
    resolve_op: MemOp = MemOp.DELETE

    def __post_init__(self) -> None:
        object.__setattr__(self, "resolve_op", MemOp(self.resolve_op))
        if self.resolve_op not in (MemOp.DELETE, MemOp.PASS):
            raise SchemaViolation("resolve_op must be DELETE or PASS", field="resolve_op")
        if (self.mutate_session is None) != (self.text_v2 is None):
            raise SchemaViolation("mutate_session and text_v2 go together", field="text_v2")
        if (self.resolve_session is None) != (self.resolution_text is None):
            raise SchemaViolation("resolve_session and resolution_text go together", field="resolution_text")
        if self.introduce_session < 1:
            raise SchemaViolation("sessions start at 1", field="introduce_session")
        last = self.introduce_session
        for name in ("mutate_session", "resolve_session"):
            v = getattr(self, name)
            if v is not None:
                if v <= last:
                    raise SchemaViolation("lifecycle sessions must strictly increase", field=name)
                last = v

    @property
    def last_session(self) -> int:
        return max(x for x in (self.introduce_session, self.mutate_session, self.resolve_session) if x is not None)

    def texts(self) -> List[str]:
        return [t for t in (self.text_v1, self.text_v2, self.resolution_text) if t is not None]


@dataclass(frozen=True)
class DriftScript:
    facts: Tuple[FactLifecycle, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "facts", tuple(self.facts))
        seen = set()
        for f in self.facts:
            for t in f.texts():
                t = normalize(t)
                if t in seen:
                    raise SchemaViolation(f"text {t!r} used twice in the script", field="facts")
                seen.add(t)


_OPENERS = [
    "Hello, it's me again. How have you been?",
    "Good morning! How are you doing these days?",
    "Hi there, I called to check in on you.",
    "Hello! Is this a good time to talk?",
]
_LEADS = ["", "Well, ", "Actually, ", "Let me see. ", "Oh, "]
_ACKS = [
    "I see. Thank you for telling me.",
    "That is good to know.",
    "I will keep that in mind.",
    "Thanks for sharing that with me.",
    "I understand.",
]
_FILLERS = [
    ("The weather is nice today.", "It really is. Do you go outside often?"),
    ("I watched some TV this morning.", "What did you watch?"),
    ("Nothing special happened.", "A quiet week can be nice too."),
    ("I had lunch a little while ago.", "Did you enjoy your meal?"),
]
_FOLLOW_UP = "Last time you mentioned: {m}. How is that going?"


def _render_session(rng: random.Random, memory: MemoryState, summary: Sequence[str]) -> List[Turn]:
    lines: List[Tuple[Speaker, str]] = [(Speaker.BOT, rng.choice(_OPENERS))]
    items = [(f"{rng.choice(_LEADS)}{s}.", rng.choice(_ACKS)) for s in summary]
    items += [rng.choice(_FILLERS) for _ in range(rng.randint(1, 2))]
    rng.shuffle(items)
    if len(memory):
        lines.append((Speaker.USER, "I'm doing okay."))
        lines.append((Speaker.BOT, _FOLLOW_UP.format(m=rng.choice(memory.texts))))
    for user, bot in items:
        lines.append((Speaker.USER, user))
        lines.append((Speaker.BOT, bot))
    return [Turn(sp, text, n) for n, (sp, text) in enumerate(lines)]


def _purity_holds(before: MemoryState, summary: SummaryBatch, table: Mapping, after: MemoryState) -> bool:
    kept = set(after.ids)
    return all(table[m.id, s.id] is MemOp.APPEND
               for m in before if m.id in kept for s in summary if s.id in kept)


def synth_drift(script: DriftScript, sessions: int, episode_id: Optional[str] = None) -> Episode:
    """Build an episode whose gold summaries, op labels and memories follow the script.

    Gold memory after each session comes from ``update_memory_oracle`` over the
    gold op table, so the episode is consistent by construction.
    """
    if sessions < 1:
        raise ScriptOverflow("need at least one session")
    for f in script.facts:
        if f.last_session > sessions:
            raise ScriptOverflow(f"fact {f.text_v1!r} needs session {f.last_session} of {sessions}")
    rng = random.Random(script.seed)
    fact_of: Dict[str, int] = {}
    for n, f in enumerate(script.facts):
        for t in f.texts():
            fact_of[normalize(t)] = n

    out: List[Session] = []
    memory = MemoryState((), 1)
    for i in range(1, sessions + 1):
        texts: List[str] = []
        event: Dict[str, MemOp] = {}
        for f in script.facts:
            if f.introduce_session == i:
                texts.append(normalize(f.text_v1))
            elif f.mutate_session == i:
                texts.append(normalize(f.text_v2))
                event[texts[-1]] = MemOp.REPLACE
            elif f.resolve_session == i:
                texts.append(normalize(f.resolution_text))
                event[texts[-1]] = f.resolve_op
        summary = SummaryBatch.from_texts(texts, i)
        table: Dict[Tuple[str, str], MemOp] = {}
        ops: List[LabeledPair] = []
        for m in memory:
            for s in summary:
                same_fact = fact_of[m.text] == fact_of[s.text]
                op = event.get(s.text, MemOp.APPEND) if same_fact else MemOp.APPEND
                table[m.id, s.id] = op
                ops.append(LabeledPair(m.text, s.text, op.value))
        after = update_memory_oracle(memory, summary, table)
        if not _purity_holds(memory, summary, table, after):
            raise RuntimeError("generated gold memory violates post-update purity")
        out.append(Session(i, _render_session(rng, memory, texts), memory, summary, after,
                           0 if i == 1 else rng.randint(7, 14), tuple(ops)))
        memory = after
    return Episode(episode_id or f"synth-{script.seed}", out, MemoryPolicy.MEMORY_GOLD, EpisodeStatus.CLOSED)


# (v1, v2, resolved) per topic; a PASS resolution restates the current version.
FACT_TOPICS: List[Tuple[str, str, str]] = [
    ("Has a sore throat", "Throat still hurts and saw a doctor", "Throat is fully recovered"),
    ("Has a cold and takes medicine", "Cold got worse and has a fever", "Cold is all better now"),
    ("Haven't got COVID tested yet", "Just got positive results from COVID test", "Recovered from COVID"),
    ("Couldn't sleep well", "Sleeping well after taking sleeping tablets", "Stopped taking sleeping tablets"),
    ("Takes pain relievers for a migraine", "Migraine got worse this week", "Migraine is gone"),
    ("Back hurts a lot", "Receiving physiotherapy for the back", "Back pain is healed"),
    ("Planning to see a doctor", "Went to the hospital for a checkup", "Checkup results were all normal"),
    ("Lives alone", "Daughter is staying over for a while", "Daughter moved back home"),
    ("Grandson is in elementary school", "Grandson entered middle school", "Grandson finished school exams"),
    ("Lost appetite and doesn't eat much", "Appetite is slowly coming back", "Eating well again"),
    ("Knee hurts when walking", "Got an injection for the knee", "Knee feels fine now"),
    ("Arguing with son lately", "Talked things through with son", "Made up with son"),
    ("Looking for a new job", "Has a job interview next week", "Got the new job"),
    ("Planning a trip to the sea", "Booked a train ticket for the trip", "Came back from the trip"),
    ("Started learning to paint", "Painting class moved to Tuesdays", "Quit the painting class"),
    ("Gained a few pounds", "Started walking every morning to lose weight", "Back to normal weight"),
    ("Dog is sick", "Took the dog to the vet", "Dog is healthy again"),
    ("Roof is leaking", "Repairman is coming to fix the roof", "Roof got repaired"),
    ("Worried about blood pressure", "Blood pressure medicine was changed", "Blood pressure is stable now"),
    ("Has a toothache", "Had a tooth pulled at the dentist", "Toothache is gone"),
    ("Caring for a sick husband", "Husband was admitted to the hospital", "Husband was discharged"),
    ("Waiting for test results", "Test results came back unclear", "Test results came back fine"),
    ("Eye surgery is scheduled", "Had eye surgery last week", "Eyes have fully healed"),
    ("Feeling lonely these days", "Joined a senior center club", "No longer feels lonely"),
    ("Coughing at night", "Cough turned into bronchitis", "Cough has stopped"),
    ("Moving to a new apartment", "Packing for the move", "Settled into the new apartment"),
    ("Garden flowers are wilting", "Started using fertilizer in the garden", "Flowers are blooming again"),
    ("Ankle is sprained", "Walking with a cane because of the ankle", "Ankle has healed"),
    ("Has a cast on the arm", "Cast on the arm comes off soon", "Cast was removed"),
    ("Mother is in the hospital", "Mother is recovering at home", "Mother is healthy now"),
]
STABLE_FACTS: List[str] = [
    "Has a dog", "Goes to the gym", "Goes hiking every weekend", "Gardening as a hobby",
    "Has a son", "Has sleeping tablets prescribed", "Likes watching dramas", "Goes to church on Sundays",
    "Lives near a park", "Enjoys cooking soup", "Has two grandchildren", "Plays the harmonica",
]


def _pass_text(current: str) -> str:
    return f"Still {current[0].lower()}{current[1:]}"


def random_script(seed: int, sessions: int = 5, n_facts: Tuple[int, int] = (3, 7),
                  p_mutate: float = 0.5, p_resolve: float = 0.5, p_pass: float = 0.2,
                  n_stable: Tuple[int, int] = (1, 3)) -> DriftScript:
    """Random lifecycles drawn from the built-in topic pool."""
    rng = random.Random(seed)
    facts: List[FactLifecycle] = []
    for v1, v2, done in rng.sample(FACT_TOPICS, rng.randint(*n_facts)):
        intro = rng.randint(1, sessions)
        mutate = resolve = None
        if intro < sessions and rng.random() < p_mutate:
            mutate = rng.randint(intro + 1, sessions)
        last = mutate or intro
        if last < sessions and rng.random() < p_resolve:
            resolve = rng.randint(last + 1, sessions)
        op = MemOp.PASS if resolve is not None and rng.random() < p_pass else MemOp.DELETE
        resolution = None
        if resolve is not None:
            resolution = _pass_text(v2 if mutate else v1) if op is MemOp.PASS else done
        facts.append(FactLifecycle(intro, v1, mutate, v2 if mutate else None, resolve, resolution, op))
    for text in rng.sample(STABLE_FACTS, rng.randint(*n_stable)):
        facts.append(FactLifecycle(rng.randint(1, sessions), text))
    return DriftScript(tuple(facts), seed)


def synth_corpus(n_episodes: int, sessions: int = 5, seed: int = 0, **script_kw: Any) -> List[Episode]:
    master = random.Random(seed)
    out = []
    for n in range(n_episodes):
        script = random_script(master.randrange(2 ** 31), sessions, **script_kw)
        out.append(synth_drift(script, sessions, episode_id=f"synth-{seed}-{n:04d}"))
    return out


def gold_classifier(episode: Episode, default: MemOp = MemOp.APPEND) -> TableOracle:
    """Table classifier holding every gold pair label of the episode."""
    pairs: Dict[Tuple[str, str], LabeledPair] = {}
    for s in episode.sessions:
        for p in s.gold_ops:
            if p.is_fusion:
                continue
            key = (normalize(p.m_text), normalize(p.s_text))
            if key in pairs and pairs[key].gold != p.gold:
                raise SchemaViolation(f"conflicting gold labels for pair {key!r}", field="ops")
            pairs[key] = p
    return TableOracle(pairs.values(), default)
