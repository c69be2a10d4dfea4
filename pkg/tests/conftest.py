from __future__ import annotations

import random
from typing import Dict, Tuple

import pytest
from hypothesis import strategies as st

from memkeeper.memory import MemOp, MemoryState, SummaryBatch

OPS = list(MemOp)


class TextTable:
    """Classifier backed by a dict keyed on (m_text, s_text); counts calls."""

    concurrent_safe = True

    def __init__(self, table: Dict[Tuple[str, str], MemOp]):
        self.table = table
        self.calls = 0

    def classify(self, m_text: str, s_text: str) -> MemOp:
        self.calls += 1
        return self.table[m_text, s_text]


def random_instance(rng: random.Random, max_m: int = 8, max_s: int = 8):
    """Memory, summary and a full op table keyed by ids; all texts distinct."""
    nm, ns = rng.randint(0, max_m), rng.randint(0, max_s)
    memory = MemoryState.from_texts([f"memory fact {i}" for i in range(nm)], 2)
    summary = SummaryBatch.from_texts([f"summary fact {j}" for j in range(ns)], 2)
    by_id = {(m.id, s.id): rng.choice(OPS) for m in memory for s in summary}
    return memory, summary, by_id


def text_table(memory, summary, by_id) -> TextTable:
    return TextTable({(m.text, s.text): by_id[m.id, s.id] for m in memory for s in summary})


@st.composite
def instances(draw, max_m: int = 6, max_s: int = 6):
    nm = draw(st.integers(0, max_m))
    ns = draw(st.integers(0, max_s))
    memory = MemoryState.from_texts([f"m text {i}" for i in range(nm)], 2)
    summary = SummaryBatch.from_texts([f"s text {j}" for j in range(ns)], 2)
    by_id = {(m.id, s.id): draw(st.sampled_from(OPS)) for m in memory for s in summary}
    return memory, summary, by_id


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)
