"""Evaluation metrics: pairwise accuracy, set F1, BLEU, unigram F1, Distinct-n,
per-rater score standardization.

All text metrics use whitespace tokens after normalization.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Sequence

from .errors import EmptyInput, LengthMismatch, SchemaViolation
from .memory import MemOp, MemoryState
from .text import ngrams, normalize, tokenize

BLEU_EPSILON = 0.1

# Every convention in force, emitted in report metadata.
METRIC_SETTINGS: Dict[str, object] = {
    "tokenizer": "whitespace after NFC + whitespace collapse, no case folding",
    "set_f1_match": "exact normalized text",
    "set_f1_both_empty": 1.0,
    "bleu": "corpus-level, brevity penalty, epsilon smoothing on zero n-gram precision",
    "bleu_epsilon": BLEU_EPSILON,
    "distinct_denominator": "total words (conventional n-gram denominator reported separately)",
    "standardization_sd": "population",
}

# Published scores of trained models; not reproducible without them.
REFERENCE_SCORES = {
    "pairwise_accuracy_test_nli_transfer": 84.10,
    "set_f1_test_nli_transfer": 88.69,
}


def pairwise_accuracy(pred: Sequence[MemOp], gold: Sequence[MemOp]) -> float:
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise EmptyInput("no labels to score")
    return sum(MemOp(p) == MemOp(g) for p, g in zip(pred, gold)) / len(gold)


def confusion_matrix(pred: Sequence[MemOp], gold: Sequence[MemOp]) -> Dict[str, Dict[str, int]]:
    """Counts indexed as ``matrix[gold][pred]``."""
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gold)} gold labels")
    labels = [op.value for op in MemOp]
    matrix = {g: {p: 0 for p in labels} for g in labels}
    for p, g in zip(pred, gold):
        matrix[MemOp(g).value][MemOp(p).value] += 1
    return matrix


@dataclass(frozen=True)
class SetF1Report:
    precision: float
    recall: float
    f1: float
    matched: int
    pred_size: int
    gold_size: int

    def to_json(self) -> Dict[str, float]:
        return asdict(self)


def _texts(x) -> List[str]:
    if isinstance(x, MemoryState):
        return x.texts
    return [normalize(t) for t in x]


def set_f1(pred, gold) -> SetF1Report:
    """Sentence-level P/R/F1 between two memories (or lists of texts)."""
    p, g = set(_texts(pred)), set(_texts(gold))
    if not p and not g:
        return SetF1Report(1.0, 1.0, 1.0, 0, 0, 0)
    matched = len(p & g)
    precision = matched / len(p) if p else 0.0
    recall = matched / len(g) if g else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return SetF1Report(precision, recall, f1, matched, len(p), len(g))


def bleu_n(candidates: Sequence[str], references: Sequence[str], n: int = 2, smooth: bool = True) -> float:
    """Corpus BLEU with uniform weights over 1..n-grams and one reference each."""
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    matches = [0] * n
    totals = [0] * n
    cand_len = ref_len = 0
    for c, r in zip(candidates, references):
        ct, rt = tokenize(c), tokenize(r)
        cand_len += len(ct)
        ref_len += len(rt)
        for order in range(1, n + 1):
            cg, rg = Counter(ngrams(ct, order)), Counter(ngrams(rt, order))
            matches[order - 1] += sum(min(cnt, rg[g]) for g, cnt in cg.items())
            totals[order - 1] += max(len(ct) - order + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if not smooth or t == 0:
                return 0.0
            m = BLEU_EPSILON
        log_p += math.log(m / t) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def unigram_f1(candidate: str, reference: str) -> float:
    ct, rt = tokenize(candidate), tokenize(reference)
    if not ct or not rt:
        return float(ct == rt)
    common = sum((Counter(ct) & Counter(rt)).values())
    if common == 0:
        return 0.0
    p, r = common / len(ct), common / len(rt)
    return 2 * p * r / (p + r)


def _distinct_counts(utterances: Iterable[str], n: int):
    grams = set()
    words = 0
    total_grams = 0
    for u in utterances:
        toks = tokenize(u)
        words += len(toks)
        gs = ngrams(toks, n)
        total_grams += len(gs)
        grams.update(gs)
    return len(grams), words, total_grams


def distinct_n(utterances: Sequence[str], n: int = 1) -> float:
    """Distinct n-grams divided by the total word count of the corpus."""
    if not utterances:
        raise EmptyInput("empty corpus")
    distinct, words, _ = _distinct_counts(utterances, n)
    if words == 0:
        raise EmptyInput("corpus has no words")
    return distinct / words


def distinct_n_conventional(utterances: Sequence[str], n: int = 1) -> float:
    """Distinct n-grams divided by the total n-gram count."""
    if not utterances:
        raise EmptyInput("empty corpus")
    distinct, _, total = _distinct_counts(utterances, n)
    return distinct / total if total else 0.0


@dataclass(frozen=True)
class RaterScores:
    rater_id: str
    scores: Sequence[float]

    def __post_init__(self) -> None:
        if not self.scores:
            raise EmptyInput(f"rater {self.rater_id!r} has no scores")
        for x in self.scores:
            if not 0 <= x <= 100:
                raise SchemaViolation(f"score {x} outside [0, 100]", field="scores")


def standardize_scores(groups: Iterable[RaterScores]) -> Dict[str, List[float]]:
    """Per-rater z-scores with population sd; a constant rater maps to zeros."""
    out: Dict[str, List[float]] = {}
    for g in groups:
        mean = statistics.fmean(g.scores)
        sd = statistics.pstdev(g.scores, mu=mean)
        out[g.rater_id] = [0.0 if sd == 0 else (x - mean) / sd for x in g.scores]
    return out


def generation_report(candidates: Sequence[str], references: Sequence[str]) -> Dict[str, object]:
    """BLEU-1/2, mean unigram F1 and Distinct-1/2 of the candidates."""
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise EmptyInput("no candidates")
    return {
        "bleu1": bleu_n(candidates, references, 1),
        "bleu2": bleu_n(candidates, references, 2),
        "f1": statistics.fmean(unigram_f1(c, r) for c, r in zip(candidates, references)),
        "distinct1": distinct_n(candidates, 1),
        "distinct2": distinct_n(candidates, 2),
        "distinct1_conventional": distinct_n_conventional(candidates, 1),
        "distinct2_conventional": distinct_n_conventional(candidates, 2),
        "n": len(candidates),
        "metadata": dict(METRIC_SETTINGS),
    }


def render_table(rows: Sequence[Sequence[object]], header: Sequence[str]) -> str:
    cells = [[str(h) for h in header]] + [[f"{c:.4f}" if isinstance(c, float) else str(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
