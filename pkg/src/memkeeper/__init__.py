"""Long-term memory for multi-session dialogue agents.

Memory is a list of short sentences about the user. After each session the
summary is merged in with pairwise PASS / REPLACE / APPEND / DELETE decisions.
"""

from .classify import (
    ConstantClassifier,
    LabeledPair,
    LexicalHeuristic,
    NliClassifier,
    NliLabel,
    NliVerdict,
    NoisyClassifier,
    OperationClassifier,
    RemoteClassifier,
    RemoteNli,
    TableOracle,
    classify_batch,
    lexical_heuristic,
    nli_to_op,
    remote_classify,
    table_oracle,
)
from .dataset import (
    CorpusStats,
    DriftScript,
    FactLifecycle,
    FieldMapping,
    PairRecord,
    corpus_stats,
    dump_episodes,
    gold_classifier,
    load_episodes,
    load_pairs,
    synth_corpus,
    synth_drift,
)
from .errors import ClassifierFailure, ExternalServiceError, InputError, MemkeeperError
from .memory import (
    MemOp,
    MemorySentence,
    MemoryState,
    MemoryUpdateResult,
    Origin,
    SummaryBatch,
    apply_operation,
    audit_memory,
    update_memory,
    update_memory_oracle,
)
from .metrics import bleu_n, distinct_n, pairwise_accuracy, set_f1, standardize_scores, unigram_f1
from .orchestrator import Episode, MemoryPolicy, Orchestrator, Session, Turn, replay_corpus, replay_episode
from .retrieval import HashedNgramEmbedder, cosine_sim, default_embedder, retrieve_top_k, triplet_eval

__version__ = "0.1.0"

__all__ = [
    "ClassifierFailure",
    "ConstantClassifier",
    "CorpusStats",
    "DriftScript",
    "Episode",
    "ExternalServiceError",
    "FactLifecycle",
    "FieldMapping",
    "HashedNgramEmbedder",
    "InputError",
    "LabeledPair",
    "LexicalHeuristic",
    "MemOp",
    "MemkeeperError",
    "MemoryPolicy",
    "MemorySentence",
    "MemoryState",
    "MemoryUpdateResult",
    "NliClassifier",
    "NliLabel",
    "NliVerdict",
    "NoisyClassifier",
    "OperationClassifier",
    "Orchestrator",
    "Origin",
    "PairRecord",
    "RemoteClassifier",
    "RemoteNli",
    "Session",
    "SummaryBatch",
    "TableOracle",
    "Turn",
    "apply_operation",
    "audit_memory",
    "bleu_n",
    "classify_batch",
    "corpus_stats",
    "cosine_sim",
    "default_embedder",
    "distinct_n",
    "dump_episodes",
    "gold_classifier",
    "lexical_heuristic",
    "load_episodes",
    "load_pairs",
    "nli_to_op",
    "pairwise_accuracy",
    "remote_classify",
    "replay_corpus",
    "replay_episode",
    "retrieve_top_k",
    "set_f1",
    "standardize_scores",
    "synth_corpus",
    "synth_drift",
    "table_oracle",
    "triplet_eval",
    "unigram_f1",
    "update_memory",
    "update_memory_oracle",
]
