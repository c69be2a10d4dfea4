"""Command-line entry point: ``memkeeper <command> [options]``.

Exit codes: 0 success, 1 input or schema error, 2 external service error.
Settings resolve as flags > ``MEMKEEPER_*`` environment > JSON config file
(``--config`` or ``MEMKEEPER_CONFIG``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO

from .classify import (
    LexicalHeuristic,
    NliClassifier,
    NoisyClassifier,
    OperationClassifier,
    RemoteClassifier,
    RemoteNli,
    TableOracle,
    classify_batch,
)
from .clients import clients_from_env
from .dataset import (
    FieldMapping,
    dump_episodes,
    exportable_pairs,
    gold_classifier,
    label_distribution,
    load_episodes,
    load_pairs,
    corpus_stats,
    synth_corpus,
)
from .errors import ConfigError, ExternalServiceError, InputError, MemkeeperError, SchemaViolation
from .memory import MemOp, MemoryState, MemoryUpdateResult, SummaryBatch, update_memory
from .metrics import confusion_matrix, generation_report, pairwise_accuracy, render_table
from .orchestrator import EpisodeLog, EpisodeStatus, MemoryPolicy, Orchestrator, replay_corpus
from .retrieval import DEFAULT_K, DEFAULT_MARGIN, default_embedder, load_triplets, retrieve_top_k, triplet_eval

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    classifier: str = "heuristic"
    policy: str = "MEMORY_UPDATE"
    k: int = DEFAULT_K
    margin: float = DEFAULT_MARGIN
    seed: int = 0
    generator_url: Optional[str] = None
    summarizer_url: Optional[str] = None
    timeout_ms: int = 10_000
    retries: int = 1
    out: Optional[str] = None
    log_dir: Optional[str] = None
    noise: float = 0.0
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must be in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        MemoryPolicy.parse(self.policy)
        _backend_name(self.classifier)
        return self


_ENV_PREFIX = "MEMKEEPER_"


def _coerce(name: str, value: Any) -> Any:
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if "int" in str(kind):
            return int(value)
        if "float" in str(kind):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


def resolve_config(flags: Dict[str, Any], env: Optional[Dict[str, str]] = None,
                   config_path: Optional[str] = None) -> RunConfig:
    env = dict(os.environ if env is None else env)
    merged: Dict[str, Any] = {}
    path = config_path or env.get(_ENV_PREFIX + "CONFIG")
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(data)
    names = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        v = env.get(_ENV_PREFIX + name.upper())
        if v is not None:
            merged[name] = v
    for name, v in flags.items():
        if name in names and v is not None:
            merged[name] = v
    return RunConfig(**{k: _coerce(k, v) for k, v in merged.items()}).validate()


def _backend_name(spec: str) -> str:
    head = spec.split(":", 1)[0]
    if head in ("heuristic", "gold"):
        return head
    if head in ("table", "remote", "nli-remote"):
        if ":" not in spec or not spec.split(":", 1)[1]:
            raise ConfigError(f"classifier {head!r} needs a target, e.g. {head}:<path or url>")
        return head
    raise ConfigError(f"unknown classifier backend {spec!r}")


def build_classifier(cfg: RunConfig) -> OperationClassifier:
    """Instantiate the configured backend, wrapped with label noise if requested."""
    name = _backend_name(cfg.classifier)
    target = cfg.classifier.split(":", 1)[1] if ":" in cfg.classifier else ""
    timeout = cfg.timeout_ms / 1000
    if name == "heuristic":
        clf: OperationClassifier = LexicalHeuristic()
    elif name == "table":
        kept, _ = exportable_pairs(load_pairs(target))
        clf = TableOracle([r.to_labeled() for r in kept])
    elif name == "remote":
        clf = RemoteClassifier(target, timeout=timeout, retries=cfg.retries)
    elif name == "nli-remote":
        clf = NliClassifier(RemoteNli(target, timeout=timeout, retries=cfg.retries))
    else:
        raise ConfigError("the gold backend only works with replay")
    if cfg.noise > 0:
        clf = NoisyClassifier(clf, cfg.noise, cfg.seed)
    return clf


def _emit(text: str, cfg: RunConfig, out: TextIO) -> None:
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        out.write(text + "\n")


def _read_sentences(path: str) -> List[Any]:
    """JSON list (strings or sentence objects) or plain text, one sentence per line."""
    try:
        with open(path, encoding="utf-8") as f:
            raw = f.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    stripped = raw.strip()
    if stripped.startswith("["):
        try:
            data = json.loads(stripped)
        except ValueError as exc:
            raise SchemaViolation(f"{path}: invalid JSON ({exc})") from None
        if not all(isinstance(x, (str, dict)) for x in data):
            raise SchemaViolation(f"{path}: expected strings or sentence objects")
        return data
    return [line for line in raw.splitlines() if line.strip()]


def _memory_from(items: List[Any], session_index: int) -> MemoryState:
    if items and all(isinstance(x, dict) for x in items):
        return MemoryState.from_json(items, session_index)
    if any(isinstance(x, dict) for x in items):
        raise SchemaViolation("mix of strings and sentence objects")
    return MemoryState.from_texts(items, session_index)


def _summary_from(items: List[Any], session: int) -> SummaryBatch:
    if items and all(isinstance(x, dict) for x in items):
        return SummaryBatch.from_json(items, session)
    if any(isinstance(x, dict) for x in items):
        raise SchemaViolation("mix of strings and sentence objects")
    return SummaryBatch.from_texts(items, session)


def render_diff(before: MemoryState, summary: SummaryBatch, result: MemoryUpdateResult) -> List[str]:
    """One line per removed or added sentence, naming the pair that decided it."""
    text = {s.id: s.text for s in list(before) + list(summary)}
    kept = set(result.new_memory.ids)
    lines = []
    for m in before:
        if m.id in kept:
            continue
        if m in result.evicted:
            lines.append(f"- EVICTED  {m.id}: {m.text}")
            continue
        pair = result.deciding_pair(m.id)
        verb = "REPLACED" if pair and pair[2] is MemOp.REPLACE else "DELETED"
        by = f"  [by {pair[1]}: {text[pair[1]]}]" if pair else ""
        lines.append(f"- {verb:<8} {m.id}: {m.text}{by}")
    for s in summary:
        if s.id in kept:
            lines.append(f"+ ADDED    {s.id}: {s.text}")
        elif s in result.dropped_duplicates:
            lines.append(f"= DUPLICATE {s.id}: {s.text}")
        elif s in result.evicted:
            lines.append(f"- EVICTED  {s.id}: {s.text}")
        else:
            pair = result.deciding_pair(s.id)
            verb = "DELETED" if pair and pair[2] is MemOp.DELETE else "PASSED"
            by = f"  [by {pair[0]}: {text[pair[0]]}]" if pair else ""
            lines.append(f"x {verb:<8} {s.id}: {s.text}{by}")
    return lines


# Commands


def cmd_classify(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    op = build_classifier(cfg).classify(args.m, args.s)
    out.write(f"{MemOp(op).value}\t{cfg.classifier}\n")
    return 0


def cmd_update(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    memory = _memory_from(_read_sentences(args.memory), args.session)
    summary = _summary_from(_read_sentences(args.summary), args.session)
    clf = build_classifier(cfg)
    start = time.perf_counter()
    result = update_memory(memory, summary, clf, args.max_memory)
    elapsed = (time.perf_counter() - start) * 1000
    _emit(json.dumps(result.new_memory.to_json(), ensure_ascii=False, indent=2), cfg, out)
    for line in render_diff(memory, summary, result):
        out.write(line + "\n")
    out.write(f"# |M|={len(memory)} |S|={len(summary)} |M'|={len(result.new_memory)} "
              f"calls={result.classifier_calls} time={elapsed:.2f} ms\n")
    return 0


def cmd_retrieve(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    memory = _memory_from(_read_sentences(args.memory), 2)
    context = args.turn or []
    if args.context:
        context = context + [str(x) for x in _read_sentences(args.context)]
    result = retrieve_top_k(context, memory, default_embedder(seed=cfg.seed), cfg.k)
    if not result.ranked:
        out.write("(empty)\n")
    for s, score in result.ranked:
        out.write(f"{score:.4f}\t{s.id}\t{s.text}\n")
    return 0


def cmd_triplets(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    report = triplet_eval(load_triplets(args.path), default_embedder(seed=cfg.seed), cfg.margin)
    _emit(json.dumps(report.to_json(), indent=2), cfg, out)
    return 0


def _mapping(args: argparse.Namespace) -> Optional[FieldMapping]:
    return FieldMapping.from_file(args.mapping) if getattr(args, "mapping", None) else None


def cmd_replay(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    episodes = load_episodes(args.dataset, _mapping(args))
    policy = MemoryPolicy.parse(cfg.policy)
    kw: Dict[str, Any] = {}
    if policy is MemoryPolicy.MEMORY_UPDATE:
        if _backend_name(cfg.classifier) == "gold":
            if cfg.noise > 0:
                kw["classifier_for"] = lambda ep: NoisyClassifier(gold_classifier(ep), cfg.noise, cfg.seed)
            else:
                kw["classifier_for"] = gold_classifier
        else:
            kw["classifier"] = build_classifier(cfg)
    report = replay_corpus(episodes, policy, max_memory=args.max_memory, workers=cfg.workers, **kw)
    rows = [(f"Session {i}", f1, len(report.scores[i])) for i, f1 in report.by_session().items()]
    rows.append(("All", report.aggregate, sum(len(v) for v in report.scores.values())))
    out.write(render_table(rows, ("Session", f"Set F1 ({policy.value})", "n")) + "\n")
    if cfg.out:
        _emit(json.dumps(report.to_json(), indent=2), cfg, out)
    return 0


def cmd_stats(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    stats = corpus_stats(load_episodes(args.dataset, _mapping(args)))
    out.write((json.dumps(stats.to_json(), indent=2) if args.json else stats.render()) + "\n")
    if cfg.out:
        _emit(json.dumps(stats.to_json(), indent=2), cfg, out)
    return 0


def cmd_labels(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    _emit(json.dumps(label_distribution(load_pairs(args.pairs)), indent=2), cfg, out)
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    records, fusion = exportable_pairs(load_pairs(args.pairs))
    if args.split:
        records = [r for r in records if r.split is not None and r.split.value == args.split.upper()]
    gold = [MemOp(r.gold) for r in records]
    pred = classify_batch(build_classifier(cfg), [(r.m, r.s) for r in records])
    acc = pairwise_accuracy(pred, gold)
    matrix = confusion_matrix(pred, gold)
    labels = [op.value for op in MemOp]
    out.write(f"accuracy {acc:.4f} on {len(gold)} pairs ({fusion} FUSION excluded)\n")
    out.write(render_table([[g] + [matrix[g][p] for p in labels] for g in labels], ["gold \\ pred"] + labels) + "\n")
    if cfg.out:
        _emit(json.dumps({"accuracy": acc, "n": len(gold), "fusion_excluded": fusion,
                          "confusion": matrix}, indent=2), cfg, out)
    return 0


def cmd_synth(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    episodes = synth_corpus(args.episodes, args.sessions, cfg.seed)
    if cfg.out:
        dump_episodes(episodes, cfg.out)
        out.write(f"wrote {len(episodes)} episode(s) to {cfg.out}\n")
    else:
        from .dataset import episode_record

        for ep in episodes:
            out.write(json.dumps(episode_record(ep), ensure_ascii=False) + "\n")
    return 0


def cmd_metrics(args: argparse.Namespace, cfg: RunConfig, out: TextIO) -> int:
    cands = [str(x) for x in _read_sentences(args.candidates)]
    refs = [str(x) for x in _read_sentences(args.references)]
    report = generation_report(cands, refs)
    _emit(json.dumps(report, indent=2), cfg, out)
    return 0


_HELP = ":mem shows retrieved memory, :end closes the session, :quit saves and exits"


def _print_memory(lines: Sequence[str], out: TextIO, indent: str = "  ") -> None:
    if not lines:
        out.write(f"{indent}(empty)\n")
    for t in lines:
        out.write(f"{indent}{t}\n")


def cmd_session(args: argparse.Namespace, cfg: RunConfig, out: TextIO, stdin: TextIO) -> int:
    gen, summ = clients_from_env(cfg.generator_url, cfg.summarizer_url, cfg.timeout_ms, cfg.retries)
    policy = MemoryPolicy.parse(cfg.policy)
    clf = build_classifier(cfg) if policy is MemoryPolicy.MEMORY_UPDATE else None
    orch = Orchestrator(gen, summ, clf, default_embedder(seed=cfg.seed), cfg.k, log_dir=cfg.log_dir, seed=cfg.seed)
    episode = None
    if args.episode_id and cfg.log_dir and os.path.isdir(os.path.join(cfg.log_dir, args.episode_id)):
        episode = EpisodeLog(cfg.log_dir).load(args.episode_id)
        if episode.status is EpisodeStatus.CLOSED:
            raise InputError(f"episode {args.episode_id} is already closed")
    if episode is None:
        episode = orch.start_episode(policy, episode_id=args.episode_id)
    out.write(f"episode {episode.episode_id} ({policy.value}); {_HELP}\n")
    out.write(f"session {episode.current.session_index}\n")

    def end_session() -> bool:
        try:
            closure = orch.end_session(episode)
        except (ExternalServiceError, InputError) as exc:
            out.write(f"error: {exc}\n")
            return False
        out.write("summary:\n")
        _print_memory(closure.summary.texts, out)
        out.write("memory:\n")
        _print_memory(closure.memory_after.texts, out)
        if closure.update is not None:
            for line in render_diff(closure.session.memory_before, closure.summary, closure.update):
                out.write(f"  {line}\n")
        nxt = episode.current
        out.write(f"session {nxt.session_index} ({nxt.elapsed_days} days later)\n")
        return True

    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        if line == ":mem":
            _print_memory(orch.retrieve(episode), out)
        elif line == ":end":
            end_session()
        elif line == ":quit":
            break
        elif line in (":help", ":?"):
            out.write(_HELP + "\n")
        else:
            try:
                if episode.current.turns and episode.current.turns[-1].speaker.value == "user":
                    orch.retry_turn(episode)
                reply = orch.step_turn(episode, line)
            except ExternalServiceError as exc:
                out.write(f"error: {exc}\n")
                continue
            out.write(f"bot: {reply}\n")
    if episode.current.turns and not end_session():
        out.write("session left open\n")
        return 0
    orch.close_episode(episode)
    where = os.path.join(cfg.log_dir, episode.episode_id) if cfg.log_dir else "(not persisted)"
    out.write(f"episode closed: {where}\n")
    return 0


# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $MEMKEEPER_CONFIG)")
    common.add_argument("--classifier", help="heuristic | table:<pairs.jsonl> | remote:<url> | nli-remote:<url> | gold")
    common.add_argument("--policy", help="WITHOUT_MEMORY | MEMORY_ACCUMULATE | MEMORY_UPDATE | MEMORY_GOLD")
    common.add_argument("--k", type=int, help=f"retrieved memory sentences (default {DEFAULT_K})")
    common.add_argument("--margin", type=float, help=f"triplet margin (default {DEFAULT_MARGIN})")
    common.add_argument("--seed", type=int)
    common.add_argument("--generator-url", dest="generator_url")
    common.add_argument("--summarizer-url", dest="summarizer_url")
    common.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    common.add_argument("--retries", type=int)
    common.add_argument("--out")
    common.add_argument("--log-dir", dest="log_dir")
    common.add_argument("--noise", type=float, help="label-noise rate applied to the classifier")
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="memkeeper", description="Long-term memory maintenance for dialogue agents.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=func)
        return sp

    sp = add("classify", cmd_classify, "label one (memory, summary) pair")
    sp.add_argument("m")
    sp.add_argument("s")

    sp = add("update", cmd_update, "merge a summary into a memory")
    sp.add_argument("memory")
    sp.add_argument("summary")
    sp.add_argument("--session", type=int, default=2, help="index of the summarized session (default 2)")
    sp.add_argument("--max-memory", dest="max_memory", type=int)

    sp = add("retrieve", cmd_retrieve, "rank memory sentences against a context")
    sp.add_argument("memory")
    sp.add_argument("--turn", action="append", help="context turn, repeatable")
    sp.add_argument("--context", help="file with one context turn per line")

    sp = add("triplets", cmd_triplets, "triplet-margin evaluation of the embedder")
    sp.add_argument("path")

    sp = add("replay", cmd_replay, "offline set-F1 evaluation of a memory policy")
    sp.add_argument("dataset")
    sp.add_argument("--mapping", help="field-mapping JSON for foreign layouts")
    sp.add_argument("--max-memory", dest="max_memory", type=int)

    sp = add("stats", cmd_stats, "corpus statistics")
    sp.add_argument("dataset")
    sp.add_argument("--mapping")
    sp.add_argument("--json", action="store_true")

    sp = add("labels", cmd_labels, "label distribution of a pair file")
    sp.add_argument("pairs")

    sp = add("eval", cmd_eval, "pairwise accuracy and confusion matrix")
    sp.add_argument("pairs")
    sp.add_argument("--split")

    sp = add("synth", cmd_synth, "generate synthetic fact-drift episodes")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--sessions", type=int, default=5)

    sp = add("metrics", cmd_metrics, "BLEU, unigram F1 and Distinct-n of generated responses")
    sp.add_argument("candidates")
    sp.add_argument("references")

    sp = add("session", cmd_session, "interactive multi-session chat")
    sp.add_argument("--episode-id", dest="episode_id")
    return p


def main(argv: Optional[Sequence[str]] = None, stdin: Optional[TextIO] = None,
         stdout: Optional[TextIO] = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in {f.name for f in fields(RunConfig)}}
    try:
        cfg = resolve_config(flags, config_path=args.config)
        if args.command == "session":
            return cmd_session(args, cfg, stdout, stdin)
        return args.func(args, cfg, stdout)
    except ExternalServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, MemkeeperError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
